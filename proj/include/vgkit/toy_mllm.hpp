#pragma once

// A deliberately small decoder-only multimodal transformer with seeded
// weights. The input sequence is N*N visual tokens followed by text tokens;
// attention is causal; knockout plans from vgrefine hook into the attention
// weights of configured layers. See docs/toy_model.md for the exact weight
// stream so other implementations can rebuild identical models.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vgkit/grounding_metrics.hpp"
#include "vgkit/tensor_io.hpp"
#include "vgkit/vgrefine.hpp"

namespace vgkit {

// SplitMix64 (Steele, Lea, Flood 2014). The only randomness source in the
// toolkit, so every fixture and model is identical across platforms.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  // (z >> 11) * 2^-53, uniform in [0, 1).
  double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  // 2u - 1, uniform in [-1, 1).
  double next_symmetric() { return 2.0 * next_unit() - 1.0; }
  // Uniform integer in [0, bound) by rejection; bound >= 1.
  std::uint64_t next_below(std::uint64_t bound);

 private:
  std::uint64_t state_;
};

// Seed for a named sub-stream (FNV-1a of the tag mixed into the base seed).
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

struct ToyConfig {
  int layers = 2;
  int heads = 2;
  int model_dim = 8;
  int grid_n = 2;
  int vocab_size = 64;
  std::uint64_t seed = 42;
  int max_text_len = 32;

  int ffn_dim() const { return 4 * model_dim; }
  int head_dim() const { return model_dim / heads; }
  int visual_tokens() const { return grid_n * grid_n; }
  int max_positions() const { return visual_tokens() + max_text_len; }
  // ConfigError unless every count is >= 1 and heads divides model_dim.
  void validate() const;
};

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::span<const double> row(int r) const {
    return std::span<const double>(data).subspan(static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols));
  }
  std::span<double> row(int r) {
    return std::span<double>(data).subspan(static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols));
  }
};

struct LayerWeights {
  Matrix wq, wk, wv, wo;  // d x d
  Matrix w1;              // d x 4d
  Matrix w2;              // 4d x d
};

struct ToyModelState {
  ToyConfig config;
  Matrix token_embedding;     // V x d
  Matrix position_embedding;  // (N^2 + max_text_len) x d
  std::vector<LayerWeights> layers;
  Matrix unembedding;  // d x V
};

ToyModelState init_model(const ToyConfig& cfg);

struct ForwardTrace {
  std::vector<double> logits;  // at the last position
  // Last-text-token attention to the visual tokens, [L, H, N^2], after any
  // knockout; this is what a .q.vgat dump stores.
  AttentionStack attention;
  // Full last-token attention rows over every key position, index l*H + h.
  std::vector<std::vector<double>> last_rows;
  // L2 norm of the last position's residual stream after each layer.
  std::vector<double> hidden_norms;
  // Every attention matrix (seq x seq, index l*H + h); filled only on request.
  std::vector<Matrix> full_attention;
  TokenLayout layout;
};

// text_tokens must be non-empty; visual_features is N^2 x d. With a plan,
// attention weights of the planned layers are masked for the query rows the
// plan's scope selects (see RefinePlan::applies_to_query). question_len
// splits text into prompt and generated tokens (default: all prompt).
ForwardTrace forward(const ToyModelState& model, const Matrix& visual_features,
                     std::span<const int> text_tokens, const RefinePlan* knockout = nullptr,
                     std::optional<std::size_t> question_len = std::nullopt,
                     bool capture_full = false);

// Lower-cased alphanumeric words hashed into the toy vocabulary; ids 0 and 1
// are reserved when vocab_size > 2.
std::vector<int> tokenize(std::string_view text, int vocab_size);

inline constexpr std::string_view kReferencePrompt = "Write a general description of the image.";
std::vector<int> reference_prompt_tokens(int vocab_size);

// N^2 x d seeded features. With a region, channel 0 is zeroed and channel 1
// carries +1 inside / -1 outside the region (the signal a planted layer reads).
Matrix make_visual_features(const ToyConfig& cfg, std::uint64_t seed, const PatchMask* region = nullptr);

// Rewires a model so that every head of `layer` attends from text tokens to
// the visual tokens marked +1 on feature channel 1: layers before it stop
// writing to the residual stream and Q/K of `layer` read channels 0 and 1.
void plant_grounding_layer(ToyModelState& model, int layer, double gain = 4.0);

struct ExportedDumps {
  AttentionStack question;
  AttentionStack reference;
};

// Runs the question and the reference prompt over the same visual input.
ExportedDumps export_dumps(const ToyModelState& model, const Matrix& visual_features,
                           std::span<const int> question_tokens, std::span<const int> reference_tokens);

// Writes <id>.q.vgat, <id>.ref.vgat and <id>.meta.json into `dir`.
void write_sample_files(const std::filesystem::path& dir, const SampleMeta& meta, const ExportedDumps& dumps);

}  // namespace vgkit
