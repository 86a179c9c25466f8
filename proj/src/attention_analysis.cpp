#include "vgkit/attention_analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "vgkit/errors.hpp"
#include "vgkit/parallel.hpp"

namespace vgkit {

using nlohmann::json;

std::string_view to_string(ReferenceMode mode) {
  return mode == ReferenceMode::ratio ? "ratio" : "subtract";
}

ReferenceMode reference_mode_from_string(std::string_view s) {
  if (s == "ratio") return ReferenceMode::ratio;
  if (s == "subtract") return ReferenceMode::subtract;
  throw ConfigError("unknown reference mode '" + std::string(s) + "'");
}

AttentionMap head_map(const AttentionStack& stack, int layer, int head) {
  if (layer < 0 || head < 0) throw RangeError("negative layer or head index");
  return AttentionMap::from_floats(static_cast<int>(stack.grid_n()),
                                   stack.head(static_cast<std::size_t>(layer), static_cast<std::size_t>(head)));
}

HeadCell head_cell(const AttentionStack& stack, int layer, int head) {
  return HeadCell{layer, head, head_map(stack, layer, head)};
}

LayerMap layer_average(const AttentionStack& stack, int layer) {
  if (layer < 0 || static_cast<std::uint32_t>(layer) >= stack.layers()) {
    throw RangeError("layer " + std::to_string(layer) + " out of range [0, " +
                     std::to_string(stack.layers()) + ")");
  }
  std::vector<double> cells(stack.patches(), 0.0);
  for (std::uint32_t h = 0; h < stack.heads(); ++h) {
    const auto row = stack.head(static_cast<std::size_t>(layer), h);
    for (std::size_t p = 0; p < cells.size(); ++p) cells[p] += row[p];
  }
  const double inv = 1.0 / stack.heads();
  for (double& c : cells) c *= inv;
  return LayerMap{layer, AttentionMap(static_cast<int>(stack.grid_n()), std::move(cells))};
}

AttentionMap normalize_by_reference(const AttentionMap& question, const AttentionMap& reference,
                                    double eps, ReferenceMode mode) {
  if (question.n() != reference.n()) {
    throw ShapeError("question grid " + std::to_string(question.n()) + " vs reference grid " +
                     std::to_string(reference.n()));
  }
  if (!(eps > 0)) throw DegenerateInput("epsilon must be positive");
  const double q_mass = question.mass();
  if (!(q_mass > 0)) throw DegenerateInput("question attention map has zero mass");

  const auto q = question.cells();
  const auto r = reference.cells();
  std::vector<double> out(q.size());
  if (mode == ReferenceMode::ratio) {
    for (std::size_t i = 0; i < q.size(); ++i) out[i] = q[i] / (r[i] + eps);
  } else {
    const double r_mass = reference.mass();
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double rn = r_mass > 0 ? r[i] / r_mass : 0.0;
      out[i] = std::max(q[i] / q_mass - rn, 0.0);
    }
  }
  double total = 0;
  for (const double v : out) total += v;
  if (!(total > 0)) {
    // subtract mode with q^ <= ref^ everywhere: nothing question-specific.
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
  } else {
    for (double& v : out) v /= total;
  }
  return AttentionMap(question.n(), std::move(out));
}

void check_sample_shapes(std::span<const AnalysisSample> samples) {
  if (samples.empty()) throw ShapeError("sample set is empty");
  const auto& first = samples.front().question;
  for (const auto& s : samples) {
    auto fail = [&](const std::string& what) {
      ShapeError e(what);
      e.attach_sample(s.sample_id);
      throw e;
    };
    const auto& q = s.question;
    const auto& r = s.reference;
    if (q.layers() != first.layers() || q.heads() != first.heads() || q.grid_n() != first.grid_n()) {
      fail("question stack shape (" + std::to_string(q.layers()) + ", " + std::to_string(q.heads()) +
           ", " + std::to_string(q.grid_n()) + ") differs from (" + std::to_string(first.layers()) +
           ", " + std::to_string(first.heads()) + ", " + std::to_string(first.grid_n()) + ")");
    }
    if (r.layers() != q.layers() || r.heads() != q.heads() || r.grid_n() != q.grid_n()) {
      fail("reference stack shape differs from question stack shape");
    }
    if (s.mask.n() != static_cast<int>(q.grid_n())) {
      fail("mask grid " + std::to_string(s.mask.n()) + " differs from stack N " +
           std::to_string(q.grid_n()));
    }
  }
}

namespace {

struct SampleScores {
  std::vector<GroundingScores> layers;
  std::vector<GroundingScores> heads;  // [layer * H + head]
};

AttentionMap prepare(const AttentionMap& q, const AttentionMap& ref, const SweepConfig& cfg) {
  return cfg.normalize ? normalize_by_reference(q, ref, cfg.eps, cfg.reference_mode) : q;
}

SampleScores score_sample(const AnalysisSample& s, const SweepConfig& cfg) {
  const int layers = static_cast<int>(s.question.layers());
  const int heads = static_cast<int>(s.question.heads());
  SampleScores out;
  out.layers.reserve(static_cast<std::size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    const auto q = layer_average(s.question, l).map;
    const auto ref = layer_average(s.reference, l).map;
    out.layers.push_back(score(prepare(q, ref, cfg), s.mask, cfg.eps));
  }
  if (cfg.per_head) {
    out.heads.reserve(static_cast<std::size_t>(layers) * heads);
    for (int l = 0; l < layers; ++l) {
      for (int h = 0; h < heads; ++h) {
        const auto q = head_map(s.question, l, h);
        const auto ref = head_map(s.reference, l, h);
        out.heads.push_back(score(prepare(q, ref, cfg), s.mask, cfg.eps));
      }
    }
  }
  return out;
}

void accumulate(GroundingScores& acc, const GroundingScores& s) {
  acc.ar += s.ar;
  acc.kl += s.kl;
  acc.js += s.js;
}

GroundingScores finish(GroundingScores acc, std::size_t n, double eps) {
  const double inv = 1.0 / static_cast<double>(n);
  return GroundingScores{acc.ar * inv, acc.kl * inv, acc.js * inv, eps};
}

}  // namespace

SweepResult sweep(std::span<const AnalysisSample> samples, const SweepConfig& cfg) {
  check_sample_shapes(samples);
  std::vector<SampleScores> scored(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    try {
      scored[i] = score_sample(samples[i], cfg);
    } catch (Error& e) {
      e.attach_sample(samples[i].sample_id);
      throw;
    }
  });

  const std::size_t layers = samples.front().question.layers();
  const std::size_t heads = samples.front().question.heads();
  SweepResult result;
  result.sample_count = samples.size();
  for (std::size_t l = 0; l < layers; ++l) {
    GroundingScores acc;
    for (const auto& s : scored) accumulate(acc, s.layers[l]);
    result.per_layer.push_back({static_cast<int>(l), finish(acc, samples.size(), cfg.eps)});
  }
  if (cfg.per_head) {
    std::vector<HeadScores> per_head;
    per_head.reserve(layers * heads);
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t h = 0; h < heads; ++h) {
        GroundingScores acc;
        for (const auto& s : scored) accumulate(acc, s.heads[l * heads + h]);
        per_head.push_back({static_cast<int>(l), static_cast<int>(h), finish(acc, samples.size(), cfg.eps)});
      }
    }
    result.per_head = std::move(per_head);
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    result.sample_ids.push_back(samples[i].sample_id);
    result.per_sample.push_back(std::move(scored[i].layers));
  }
  return result;
}

int best_layer(const SweepResult& result) {
  if (result.per_layer.empty()) throw DegenerateInput("sweep has no layers");
  const auto it = std::min_element(
      result.per_layer.begin(), result.per_layer.end(),
      [](const LayerScores& a, const LayerScores& b) { return a.scores.kl < b.scores.kl; });
  return it->layer;
}

// --- serialization -----------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string sweep_to_csv(const SweepResult& result) {
  std::string out = "layer,head,ar,kl,js,n_samples\n";
  const std::string n = std::to_string(result.sample_count);
  auto row = [&](const std::string& layer, const std::string& head, const GroundingScores& s) {
    out += layer + ',' + head + ',' + format_double(s.ar) + ',' + format_double(s.kl) + ',' +
           format_double(s.js) + ',' + n + '\n';
  };
  for (const auto& l : result.per_layer) row(std::to_string(l.layer), "", l.scores);
  if (result.per_head) {
    for (const auto& h : *result.per_head) row(std::to_string(h.layer), std::to_string(h.head), h.scores);
  }
  return out;
}

std::string per_sample_to_csv(const SweepResult& result) {
  std::string out = "sample_id,layer,ar,kl,js\n";
  for (std::size_t i = 0; i < result.per_sample.size(); ++i) {
    for (std::size_t l = 0; l < result.per_sample[i].size(); ++l) {
      const auto& s = result.per_sample[i][l];
      out += result.sample_ids[i] + ',' + std::to_string(l) + ',' + format_double(s.ar) + ',' +
             format_double(s.kl) + ',' + format_double(s.js) + '\n';
    }
  }
  return out;
}

json scores_to_json(const GroundingScores& s) {
  return json{{"ar", s.ar}, {"kl", s.kl}, {"js", s.js}, {"epsilon_used", s.epsilon_used}};
}

json sweep_to_json(const SweepResult& result) {
  json doc;
  doc["aggregation"] = result.aggregation;
  doc["sample_count"] = result.sample_count;
  doc["log_base"] = "e";
  json layers = json::array();
  for (const auto& l : result.per_layer) {
    json row = scores_to_json(l.scores);
    row["layer"] = l.layer;
    layers.push_back(std::move(row));
  }
  doc["per_layer"] = std::move(layers);
  if (result.per_head) {
    json heads = json::array();
    for (const auto& h : *result.per_head) {
      json row = scores_to_json(h.scores);
      row["layer"] = h.layer;
      row["head"] = h.head;
      heads.push_back(std::move(row));
    }
    doc["per_head"] = std::move(heads);
  }
  if (!result.per_layer.empty()) doc["best_layer"] = best_layer(result);
  doc["sample_ids"] = result.sample_ids;
  return doc;
}

}  // namespace vgkit
