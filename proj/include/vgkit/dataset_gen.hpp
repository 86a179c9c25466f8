#pragma once

// Desk-scale evaluation fixtures: bounding boxes from pixel masks,
// localization questions from the fixed template set, and synthetic
// attention stacks with planted grounding heads.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vgkit/attention_analysis.hpp"
#include "vgkit/tensor_io.hpp"
#include "vgkit/toy_mllm.hpp"

namespace vgkit {

struct QuestionTemplate {
  std::string_view text;  // exactly one "{label}" slot
  QuestionKind kind = QuestionKind::localization;

  std::string render(std::string_view label) const;
};

inline constexpr std::array<QuestionTemplate, 10> kLocalizationTemplates{{
    {"Is there a {label} in the image?"},
    {"Can you see a {label} in the image?"},
    {"Does the image contain a {label}?"},
    {"Is a {label} present in this image?"},
    {"Do you see a {label} in the picture?"},
    {"Is the {label} visible in the image?"},
    {"Is there any sign of a {label} in the image?"},
    {"Can a {label} be found in this image?"},
    {"Does this image show a {label}?"},
    {"Is a {label} shown in the picture?"},
}};

// Tight box around the active pixels of a row-major width x height mask;
// max bounds are exclusive. DegenerateMask when no pixel is active.
BBox bbox_from_mask(std::span<const std::uint8_t> pixels, int width, int height);

std::string render_localization_question(std::string_view label, std::size_t template_index);
// Uniform over the ten templates.
std::string sample_localization_question(std::string_view label, SplitMix64& rng);

enum class BBoxMode { random, quadrant, full };
std::string_view to_string(BBoxMode mode);
BBoxMode bbox_mode_from_string(std::string_view s);

struct PlantSpec {
  std::vector<std::pair<int, int>> aligned_heads;  // (layer, head)
  double sharpness = 10.0;
};

struct FixtureSpec {
  std::uint64_t seed = 0;
  int n_samples = 8;
  int grid_n = 24;
  BBoxMode bbox_mode = BBoxMode::random;
  std::optional<PlantSpec> plant;
  int layers = 4;
  int heads = 4;
  int image_size = 336;
  double noise = 0.01;  // relative amplitude on unplanted heads
  std::string split = "calibration";
  std::string id_prefix = "s";

  void validate() const;
};

nlohmann::json fixture_spec_to_json(const FixtureSpec& spec);

struct FixtureSample {
  SampleMeta meta;
  PatchMask mask;
  AttentionStack question;
  AttentionStack reference;
};

// In-memory planted fixture: planted heads get softmax(sharpness * M) over the
// patch grid, other heads uniform with relative noise, references uniform;
// every head is scaled by a seeded visual mass in [0.3, 0.9).
std::vector<FixtureSample> synthesize_samples(const FixtureSpec& spec);

// Writes the samples plus manifest.json into `dir`; `run` (if not null) is
// embedded as the manifest's "run" record. Returns the sample ids.
std::vector<std::string> synthesize_fixture(const FixtureSpec& spec, const std::filesystem::path& dir,
                                            const nlohmann::json& run = nullptr);

struct ToyFixtureOptions {
  int model_dim = 16;
  int vocab_size = 64;
  std::uint64_t model_seed = 42;
  std::optional<int> plant_layer;
  double plant_gain = 4.0;
};

ToyConfig toy_config_for(const FixtureSpec& spec, const ToyFixtureOptions& opts);

// Same sample geometry and questions as synthesize_samples, but the dumps come
// from running the toy model on region-coded visual features.
std::vector<std::string> synthesize_toy_fixture(const FixtureSpec& spec, const ToyFixtureOptions& opts,
                                                const std::filesystem::path& dir,
                                                const nlohmann::json& run = nullptr);

struct LoadedSample {
  SampleMeta meta;
  std::string split;
  AnalysisSample sample;
};

// Reads a sample directory: the ids and splits come from manifest.json when
// present, otherwise from the sorted *.meta.json files (split "unspecified").
std::vector<LoadedSample> load_fixture(const std::filesystem::path& dir);
std::vector<AnalysisSample> analysis_samples(std::vector<LoadedSample> loaded);

}  // namespace vgkit
