#pragma once

// Visual-grounding refinement at inference time.
//
// Step I (triage): rank every (layer, head) by its mean KL divergence against
// the ground-truth masks of a calibration set, average the normalized maps of
// the top-K heads for a sample, drop cells at or below the p-th percentile
// and binarize what survives into a knockout mask.
//
// Step II (knockout): multiply the question-token -> visual-token attention
// weights at the configured layers by that mask.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vgkit/attention_analysis.hpp"
#include "vgkit/grounding_metrics.hpp"
#include "vgkit/tensor_io.hpp"

namespace vgkit {

// Position of the visual and text tokens in the model's input sequence:
// [visual_begin, visual_begin + visual_count) holds the N*N patch tokens in
// row-major patch order; text follows. The first `question_count` text
// tokens are the prompt, anything after them counts as generated.
struct TokenLayout {
  std::size_t visual_begin = 0;
  std::size_t visual_count = 0;
  std::size_t text_begin = 0;
  std::size_t text_count = 0;
  std::size_t question_count = 0;

  static TokenLayout visual_then_text(std::size_t visual_count, std::size_t text_count,
                                      std::optional<std::size_t> question_count = std::nullopt);

  std::size_t total() const noexcept { return text_begin + text_count; }
  std::size_t last_text_index() const noexcept { return text_begin + text_count - 1; }
  bool is_visual(std::size_t pos) const noexcept {
    return pos >= visual_begin && pos < visual_begin + visual_count;
  }
  bool is_question(std::size_t pos) const noexcept {
    return pos >= text_begin && pos < text_begin + question_count;
  }
  bool is_generated(std::size_t pos) const noexcept {
    return pos >= text_begin + question_count && pos < total();
  }
  void validate() const;
};

struct HeadRank {
  int layer = 0;
  int head = 0;
  double mean_kl = 0;

  friend bool operator==(const HeadRank&, const HeadRank&) = default;
};

struct HeadRanking {
  std::vector<HeadRank> entries;  // ascending mean_kl, ties by (layer, head)
  std::size_t calibration_size = 0;
  int layers = 0;
  int heads = 0;
  double eps = kDefaultEpsilon;
  std::vector<std::string> calibration_ids;
};

enum class MaskMode { post_softmax, pre_softmax };
enum class KnockoutScope { question_only, question_and_generated };

std::string_view to_string(MaskMode mode);
std::string_view to_string(KnockoutScope scope);
MaskMode mask_mode_from_string(std::string_view s);
KnockoutScope knockout_scope_from_string(std::string_view s);

inline constexpr int kDefaultTopK = 20;
inline constexpr double kDefaultPercentile = 50.0;
inline constexpr int kDefaultKnockoutLayer = 16;

struct TriageConfig {
  int k = kDefaultTopK;
  double p = kDefaultPercentile;
  std::vector<int> knockout_layers{kDefaultKnockoutLayer};
  double eps = kDefaultEpsilon;
  MaskMode mask_mode = MaskMode::post_softmax;
  KnockoutScope scope = KnockoutScope::question_only;

  // ConfigError unless 1 <= k <= total_heads, 0 < p < 100 and every
  // knockout layer lies in [0, model_layers).
  void validate(int total_heads, int model_layers) const;
};

// Binary N x N mask over the visual tokens; at least one cell is kept.
class KnockoutMask {
 public:
  // InvariantError for non-binary cells or a size mismatch; AllSuppressedError
  // when every cell is zero.
  KnockoutMask(int n, std::vector<std::uint8_t> cells);

  static KnockoutMask all_ones(int n);

  int n() const noexcept { return n_; }
  std::size_t size() const noexcept { return cells_.size(); }
  bool keeps(std::size_t patch) const { return cells_[patch] != 0; }
  std::span<const std::uint8_t> cells() const noexcept { return cells_; }
  double kept_fraction() const noexcept { return kept_fraction_; }

  // "<n>:<first bit>:<run>,<run>,..." over the row-major cells, e.g. "2:0:2,2".
  std::string to_rle() const;
  static KnockoutMask from_rle(std::string_view rle);

  friend bool operator==(const KnockoutMask& a, const KnockoutMask& b) {
    return a.n_ == b.n_ && a.cells_ == b.cells_;
  }

 private:
  int n_ = 0;
  std::vector<std::uint8_t> cells_;
  double kept_fraction_ = 0;
};

// Head map of `question` normalized by the matching head of `reference`
// (ratio mode), the map both ranking and aggregation operate on.
AttentionMap normalized_head_map(const AttentionStack& question, const AttentionStack& reference,
                                 int layer, int head, double eps);

HeadRanking rank_heads(std::span<const AnalysisSample> calibration, double eps = kDefaultEpsilon);

AttentionMap aggregate_topk(const HeadRanking& ranking, const AttentionStack& question,
                            const AttentionStack& reference, int k, double eps = kDefaultEpsilon);

// Nearest-rank percentile: threshold t = sorted[ceil(p/100 * N^2) - 1]
// (ascending); cells > t are kept.
double percentile_threshold(std::span<const double> values, double p);
KnockoutMask suppress_and_binarize(const AttentionMap& aggregate, double p);

// Zeroes visual entries of one attention row whose mask cell is 0; every
// other entry passes through untouched. No renormalization.
std::vector<double> apply_knockout(std::span<const double> row, const KnockoutMask& mask,
                                   const TokenLayout& layout);
void apply_knockout_inplace(std::span<double> row, const KnockoutMask& mask, const TokenLayout& layout);
// Pre-softmax variant: masked visual logits become -infinity.
void mask_logits_inplace(std::span<double> logits, const KnockoutMask& mask, const TokenLayout& layout);

struct RefinePlan {
  KnockoutMask mask;
  std::vector<int> layers;  // sorted, unique
  MaskMode mask_mode = MaskMode::post_softmax;
  KnockoutScope scope = KnockoutScope::question_only;
  int k = kDefaultTopK;
  double p = kDefaultPercentile;

  bool applies_to_layer(int layer) const;
  // Whether query position `pos` has its visual attention masked.
  bool applies_to_query(std::size_t pos, const TokenLayout& layout) const;
};

// Builds the mask for one sample from its question/reference stacks. Knockout
// layers are checked against `model_layers` (the model the plan will run on),
// defaulting to the stack's own layer count.
RefinePlan build_refine_plan(const HeadRanking& ranking, const TriageConfig& cfg,
                             const AttentionStack& question, const AttentionStack& reference,
                             std::optional<int> model_layers = std::nullopt);

nlohmann::json ranking_to_json(const HeadRanking& ranking);
HeadRanking ranking_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const TriageConfig& cfg);
TriageConfig config_from_json(const nlohmann::json& doc);
nlohmann::json mask_to_json(const KnockoutMask& mask);
nlohmann::json plan_to_json(const RefinePlan& plan);

}  // namespace vgkit
