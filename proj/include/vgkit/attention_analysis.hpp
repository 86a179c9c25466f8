#pragma once

// From raw attention stacks to grounding scores: head averaging, reference
// prompt normalization, and layer / head sweeps over a sample set.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vgkit/grounding_metrics.hpp"
#include "vgkit/tensor_io.hpp"

namespace vgkit {

struct LayerMap {
  int layer = 0;
  AttentionMap map;
};

struct HeadCell {
  int layer = 0;
  int head = 0;
  AttentionMap map;
};

// How a question map is normalized against the generic-prompt reference map.
//   ratio:    q / (ref + eps), rescaled to unit mass
//   subtract: max(q^ - ref^, 0), rescaled to unit mass (uniform if nothing survives)
enum class ReferenceMode { ratio, subtract };

std::string_view to_string(ReferenceMode mode);
ReferenceMode reference_mode_from_string(std::string_view s);

// One sample as consumed by sweeps and head ranking.
struct AnalysisSample {
  std::string sample_id;
  AttentionStack question;
  AttentionStack reference;
  PatchMask mask;
};

AttentionMap head_map(const AttentionStack& stack, int layer, int head);
HeadCell head_cell(const AttentionStack& stack, int layer, int head);

// Mean over heads of layer `layer`, reshaped to N x N. RangeError when the
// layer does not exist.
LayerMap layer_average(const AttentionStack& stack, int layer);

AttentionMap normalize_by_reference(const AttentionMap& question, const AttentionMap& reference,
                                    double eps = kDefaultEpsilon,
                                    ReferenceMode mode = ReferenceMode::ratio);

struct SweepConfig {
  double eps = kDefaultEpsilon;
  bool normalize = false;
  bool per_head = false;
  ReferenceMode reference_mode = ReferenceMode::ratio;
};

struct LayerScores {
  int layer = 0;
  GroundingScores scores;
};

struct HeadScores {
  int layer = 0;
  int head = 0;
  GroundingScores scores;
};

struct SweepResult {
  std::vector<LayerScores> per_layer;
  std::optional<std::vector<HeadScores>> per_head;
  std::size_t sample_count = 0;
  std::string aggregation = "mean";
  // Un-aggregated per-layer scores, [sample][layer], in input order.
  std::vector<std::string> sample_ids;
  std::vector<std::vector<GroundingScores>> per_sample;
};

// Checks that every sample shares the first sample's (L, H, N) and that
// masks match N. ShapeError names the offending sample.
void check_sample_shapes(std::span<const AnalysisSample> samples);

SweepResult sweep(std::span<const AnalysisSample> samples, const SweepConfig& cfg);

// Layer with the lowest mean KL; ties go to the smaller index.
int best_layer(const SweepResult& result);

// CSV columns: layer,head,ar,kl,js,n_samples. Per-layer rows leave `head`
// empty; per-head rows follow them.
std::string sweep_to_csv(const SweepResult& result);
std::string per_sample_to_csv(const SweepResult& result);
nlohmann::json sweep_to_json(const SweepResult& result);

nlohmann::json scores_to_json(const GroundingScores& s);

// Shortest round-trip decimal form, '.' separator, locale independent.
std::string format_double(double v);

}  // namespace vgkit
