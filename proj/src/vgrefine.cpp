#include "vgkit/vgrefine.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <set>

#include "vgkit/errors.hpp"
#include "vgkit/parallel.hpp"

namespace vgkit {

using nlohmann::json;

// --- TokenLayout -------------------------------------------------------------

TokenLayout TokenLayout::visual_then_text(std::size_t visual_count, std::size_t text_count,
                                          std::optional<std::size_t> question_count) {
  TokenLayout layout;
  layout.visual_begin = 0;
  layout.visual_count = visual_count;
  layout.text_begin = visual_count;
  layout.text_count = text_count;
  layout.question_count = question_count.value_or(text_count);
  layout.validate();
  return layout;
}

void TokenLayout::validate() const {
  if (visual_count == 0) throw ShapeError("layout has no visual tokens");
  if (text_count == 0) throw ShapeError("layout has no text tokens");
  if (visual_begin + visual_count > text_begin) {
    throw ShapeError("visual span must precede and not overlap the text span");
  }
  if (question_count == 0 || question_count > text_count) {
    throw ShapeError("question token count must lie in [1, text_count]");
  }
}

// --- enums -------------------------------------------------------------------

std::string_view to_string(MaskMode mode) {
  return mode == MaskMode::post_softmax ? "post_softmax" : "pre_softmax";
}

std::string_view to_string(KnockoutScope scope) {
  return scope == KnockoutScope::question_only ? "question_only" : "question_and_generated";
}

MaskMode mask_mode_from_string(std::string_view s) {
  if (s == "post_softmax") return MaskMode::post_softmax;
  if (s == "pre_softmax") return MaskMode::pre_softmax;
  throw ConfigError("unknown mask mode '" + std::string(s) + "'");
}

KnockoutScope knockout_scope_from_string(std::string_view s) {
  if (s == "question_only") return KnockoutScope::question_only;
  if (s == "question_and_generated") return KnockoutScope::question_and_generated;
  throw ConfigError("unknown knockout scope '" + std::string(s) + "'");
}

void TriageConfig::validate(int total_heads, int model_layers) const {
  if (k < 1 || k > total_heads) {
    throw ConfigError("k=" + std::to_string(k) + " outside [1, " + std::to_string(total_heads) + "]");
  }
  if (!(p > 0 && p < 100)) throw ConfigError("percentile p must lie in (0, 100)");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
  for (const int layer : knockout_layers) {
    if (layer < 0 || layer >= model_layers) {
      throw ConfigError("knockout layer " + std::to_string(layer) + " outside [0, " +
                        std::to_string(model_layers) + ")");
    }
  }
}

// --- KnockoutMask ------------------------------------------------------------

KnockoutMask::KnockoutMask(int n, std::vector<std::uint8_t> cells) : n_(n), cells_(std::move(cells)) {
  if (n < 1 || cells_.size() != static_cast<std::size_t>(n) * n) {
    throw InvariantError("knockout mask needs n*n cells");
  }
  std::size_t ones = 0;
  for (const auto c : cells_) {
    if (c > 1) throw InvariantError("knockout mask cells must be 0 or 1");
    ones += c;
  }
  if (ones == 0) throw AllSuppressedError("knockout mask would remove every visual token");
  kept_fraction_ = static_cast<double>(ones) / static_cast<double>(cells_.size());
}

KnockoutMask KnockoutMask::all_ones(int n) {
  return KnockoutMask(n, std::vector<std::uint8_t>(static_cast<std::size_t>(n) * n, 1));
}

std::string KnockoutMask::to_rle() const {
  std::string out = std::to_string(n_) + ':' + std::to_string(cells_.front()) + ':';
  std::size_t run = 0;
  std::uint8_t current = cells_.front();
  bool first = true;
  for (const auto c : cells_) {
    if (c == current) {
      ++run;
      continue;
    }
    out += (first ? "" : ",") + std::to_string(run);
    first = false;
    current = c;
    run = 1;
  }
  out += (first ? "" : ",") + std::to_string(run);
  return out;
}

KnockoutMask KnockoutMask::from_rle(std::string_view rle) {
  auto bad = [&] { return FormatError("malformed mask run-length string '" + std::string(rle) + "'"); };
  auto parse_uint = [&](std::string_view s) {
    std::size_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) throw bad();
    return v;
  };
  const auto c1 = rle.find(':');
  const auto c2 = c1 == std::string_view::npos ? c1 : rle.find(':', c1 + 1);
  if (c2 == std::string_view::npos) throw bad();
  const auto n = parse_uint(rle.substr(0, c1));
  const auto bit = parse_uint(rle.substr(c1 + 1, c2 - c1 - 1));
  if (bit > 1 || n == 0 || n > 1u << 15) throw bad();
  std::vector<std::uint8_t> cells;
  auto current = static_cast<std::uint8_t>(bit);
  std::string_view rest = rle.substr(c2 + 1);
  while (true) {
    const auto comma = rest.find(',');
    const auto run = parse_uint(rest.substr(0, comma));
    if (run == 0 || cells.size() + run > n * n) throw bad();
    cells.insert(cells.end(), run, current);
    current ^= 1;
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  if (cells.size() != n * n) throw bad();
  return KnockoutMask(static_cast<int>(n), std::move(cells));
}

// --- Step I ------------------------------------------------------------------

AttentionMap normalized_head_map(const AttentionStack& question, const AttentionStack& reference,
                                 int layer, int head, double eps) {
  return normalize_by_reference(head_map(question, layer, head), head_map(reference, layer, head), eps,
                                ReferenceMode::ratio);
}

HeadRanking rank_heads(std::span<const AnalysisSample> calibration, double eps) {
  check_sample_shapes(calibration);
  const int layers = static_cast<int>(calibration.front().question.layers());
  const int heads = static_cast<int>(calibration.front().question.heads());
  const std::size_t cells = static_cast<std::size_t>(layers) * heads;

  std::vector<std::vector<double>> kl(calibration.size());
  parallel_for(calibration.size(), [&](std::size_t i) {
    const auto& s = calibration[i];
    try {
      auto& out = kl[i];
      out.resize(cells);
      for (int l = 0; l < layers; ++l) {
        for (int h = 0; h < heads; ++h) {
          out[static_cast<std::size_t>(l) * heads + h] =
              kl_divergence(s.mask, normalized_head_map(s.question, s.reference, l, h, eps), eps);
        }
      }
    } catch (Error& e) {
      e.attach_sample(s.sample_id);
      throw;
    }
  });

  HeadRanking ranking;
  ranking.layers = layers;
  ranking.heads = heads;
  ranking.eps = eps;
  ranking.calibration_size = calibration.size();
  for (const auto& s : calibration) ranking.calibration_ids.push_back(s.sample_id);
  ranking.entries.reserve(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    double sum = 0;
    for (const auto& per_sample : kl) sum += per_sample[c];
    ranking.entries.push_back({static_cast<int>(c / heads), static_cast<int>(c % heads),
                               sum / static_cast<double>(calibration.size())});
  }
  // Entries were generated in (layer, head) order, so a stable sort keeps
  // lexicographic order among equal means.
  std::stable_sort(ranking.entries.begin(), ranking.entries.end(),
                   [](const HeadRank& a, const HeadRank& b) { return a.mean_kl < b.mean_kl; });
  return ranking;
}

AttentionMap aggregate_topk(const HeadRanking& ranking, const AttentionStack& question,
                            const AttentionStack& reference, int k, double eps) {
  if (k < 1 || static_cast<std::size_t>(k) > ranking.entries.size()) {
    throw RangeError("k=" + std::to_string(k) + " outside [1, " + std::to_string(ranking.entries.size()) + "]");
  }
  if (static_cast<int>(question.layers()) != ranking.layers ||
      static_cast<int>(question.heads()) != ranking.heads) {
    throw ShapeError("stack (" + std::to_string(question.layers()) + ", " + std::to_string(question.heads()) +
                     ") does not match ranking (" + std::to_string(ranking.layers) + ", " +
                     std::to_string(ranking.heads) + ")");
  }
  const int n = static_cast<int>(question.grid_n());
  std::vector<double> sum(static_cast<std::size_t>(n) * n, 0.0);
  for (int r = 0; r < k; ++r) {
    const auto& e = ranking.entries[static_cast<std::size_t>(r)];
    const auto map = normalized_head_map(question, reference, e.layer, e.head, eps);
    const auto cells = map.cells();
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += cells[i];
  }
  for (double& v : sum) v /= k;
  return AttentionMap(n, std::move(sum));
}

double percentile_threshold(std::span<const double> values, double p) {
  if (values.empty()) throw DegenerateInput("percentile of an empty set");
  if (!(p > 0 && p < 100)) throw ConfigError("percentile p must lie in (0, 100)");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(p * n / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

KnockoutMask suppress_and_binarize(const AttentionMap& aggregate, double p) {
  const double threshold = percentile_threshold(aggregate.cells(), p);
  const auto cells = aggregate.cells();
  std::vector<std::uint8_t> bits(cells.size());
  std::size_t kept = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    bits[i] = cells[i] > threshold ? 1 : 0;
    kept += bits[i];
  }
  if (kept == 0) {
    throw AllSuppressedError("every cell is at or below the p=" + format_double(p) +
                             " threshold " + format_double(threshold));
  }
  return KnockoutMask(aggregate.n(), std::move(bits));
}

// --- Step II -----------------------------------------------------------------

namespace {

void check_row(std::size_t row_size, const KnockoutMask& mask, const TokenLayout& layout) {
  if (layout.visual_count != mask.size()) {
    throw ShapeError("layout has " + std::to_string(layout.visual_count) + " visual tokens, mask has " +
                     std::to_string(mask.size()) + " cells");
  }
  if (row_size < layout.visual_begin + layout.visual_count) {
    throw ShapeError("attention row of length " + std::to_string(row_size) +
                     " does not cover the visual span");
  }
}

}  // namespace

void apply_knockout_inplace(std::span<double> row, const KnockoutMask& mask, const TokenLayout& layout) {
  check_row(row.size(), mask, layout);
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (!mask.keeps(p)) row[layout.visual_begin + p] = 0.0;
  }
}

std::vector<double> apply_knockout(std::span<const double> row, const KnockoutMask& mask,
                                   const TokenLayout& layout) {
  for (const double v : row) {
    if (!(v >= 0)) throw InvariantError("attention weights must be non-negative");
  }
  std::vector<double> out(row.begin(), row.end());
  apply_knockout_inplace(out, mask, layout);
  return out;
}

void mask_logits_inplace(std::span<double> logits, const KnockoutMask& mask, const TokenLayout& layout) {
  check_row(logits.size(), mask, layout);
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (!mask.keeps(p)) logits[layout.visual_begin + p] = -std::numeric_limits<double>::infinity();
  }
}

bool RefinePlan::applies_to_layer(int layer) const {
  return std::binary_search(layers.begin(), layers.end(), layer);
}

bool RefinePlan::applies_to_query(std::size_t pos, const TokenLayout& layout) const {
  if (layout.is_question(pos)) return true;
  return scope == KnockoutScope::question_and_generated && layout.is_generated(pos);
}

RefinePlan build_refine_plan(const HeadRanking& ranking, const TriageConfig& cfg,
                             const AttentionStack& question, const AttentionStack& reference,
                             std::optional<int> model_layers) {
  cfg.validate(static_cast<int>(ranking.entries.size()), model_layers.value_or(static_cast<int>(question.layers())));
  const auto aggregate = aggregate_topk(ranking, question, reference, cfg.k, cfg.eps);
  std::set<int> layers(cfg.knockout_layers.begin(), cfg.knockout_layers.end());
  return RefinePlan{suppress_and_binarize(aggregate, cfg.p),
                    std::vector<int>(layers.begin(), layers.end()),
                    cfg.mask_mode,
                    cfg.scope,
                    cfg.k,
                    cfg.p};
}

// --- JSON --------------------------------------------------------------------

json ranking_to_json(const HeadRanking& ranking) {
  json entries = json::array();
  for (std::size_t i = 0; i < ranking.entries.size(); ++i) {
    const auto& e = ranking.entries[i];
    entries.push_back({{"rank", i + 1}, {"layer", e.layer}, {"head", e.head}, {"mean_kl", e.mean_kl}});
  }
  return json{{"layers", ranking.layers},
              {"heads", ranking.heads},
              {"eps", ranking.eps},
              {"calibration_size", ranking.calibration_size},
              {"calibration_ids", ranking.calibration_ids},
              {"entries", std::move(entries)}};
}

HeadRanking ranking_from_json(const json& doc) {
  try {
    HeadRanking r;
    r.layers = doc.at("layers").get<int>();
    r.heads = doc.at("heads").get<int>();
    r.eps = doc.value("eps", kDefaultEpsilon);
    r.calibration_size = doc.at("calibration_size").get<std::size_t>();
    r.calibration_ids = doc.value("calibration_ids", std::vector<std::string>{});
    std::set<std::pair<int, int>> seen;
    for (const auto& e : doc.at("entries")) {
      HeadRank h{e.at("layer").get<int>(), e.at("head").get<int>(), e.at("mean_kl").get<double>()};
      if (h.layer < 0 || h.layer >= r.layers || h.head < 0 || h.head >= r.heads ||
          !seen.insert({h.layer, h.head}).second) {
        throw FormatError("ranking entry (" + std::to_string(h.layer) + ", " + std::to_string(h.head) +
                          ") is out of range or duplicated");
      }
      if (!r.entries.empty() && h.mean_kl < r.entries.back().mean_kl) {
        throw FormatError("ranking entries are not sorted by mean_kl");
      }
      r.entries.push_back(h);
    }
    if (r.entries.size() != static_cast<std::size_t>(r.layers) * r.heads) {
      throw FormatError("ranking must list every (layer, head) exactly once");
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed ranking JSON: ") + e.what());
  }
}

json config_to_json(const TriageConfig& cfg) {
  return json{{"k", cfg.k},
              {"p", cfg.p},
              {"knockout_layers", cfg.knockout_layers},
              {"eps", cfg.eps},
              {"mask_mode", std::string(to_string(cfg.mask_mode))},
              {"scope", std::string(to_string(cfg.scope))}};
}

TriageConfig config_from_json(const json& doc) {
  try {
    TriageConfig cfg;
    cfg.k = doc.value("k", kDefaultTopK);
    cfg.p = doc.value("p", kDefaultPercentile);
    cfg.knockout_layers = doc.value("knockout_layers", std::vector<int>{kDefaultKnockoutLayer});
    cfg.eps = doc.value("eps", kDefaultEpsilon);
    cfg.mask_mode = mask_mode_from_string(doc.value("mask_mode", std::string("post_softmax")));
    cfg.scope = knockout_scope_from_string(doc.value("scope", std::string("question_only")));
    return cfg;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed triage config JSON: ") + e.what());
  }
}

json mask_to_json(const KnockoutMask& mask) {
  json rows = json::array();
  for (int i = 0; i < mask.n(); ++i) {
    std::string row;
    for (int j = 0; j < mask.n(); ++j) row += mask.keeps(static_cast<std::size_t>(i) * mask.n() + j) ? '1' : '0';
    rows.push_back(row);
  }
  return json{{"n", mask.n()}, {"kept_fraction", mask.kept_fraction()}, {"rle", mask.to_rle()}, {"rows", rows}};
}

json plan_to_json(const RefinePlan& plan) {
  return json{{"mask", mask_to_json(plan.mask)},
              {"layers", plan.layers},
              {"mask_mode", std::string(to_string(plan.mask_mode))},
              {"scope", std::string(to_string(plan.scope))},
              {"applies_to", "all_heads"},
              {"k", plan.k},
              {"p", plan.p}};
}

}  // namespace vgkit
