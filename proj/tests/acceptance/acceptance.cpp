// Acceptance suite: one PASS/FAIL line per criterion, each under its time
// budget. Exit status is non-zero if any criterion fails.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "support/oracles.hpp"
#include "vgkit/attention_analysis.hpp"
#include "vgkit/cli.hpp"
#include "vgkit/dataset_gen.hpp"
#include "vgkit/errors.hpp"
#include "vgkit/grounding_metrics.hpp"
#include "vgkit/tensor_io.hpp"
#include "vgkit/toy_mllm.hpp"
#include "vgkit/vgrefine.hpp"

using namespace vgkit;
namespace fs = std::filesystem;
using Failure = std::optional<std::string>;

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

// Records the first failed check of a criterion.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && !failure_) failure_ = what;
  }
  const Failure& failure() const { return failure_; }

 private:
  Failure failure_;
};

int run_cli_quiet(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) std::cerr << "  vgkit " << args.front() << " failed: " << err.str();
  return code;
}

// --- criteria ------------------------------------------------------------------

Failure metric_identities() {
  Checks c;
  std::mt19937_64 rng(101);
  for (int t = 0; t < 200; ++t) {
    const int n = 2 + static_cast<int>(rng() % 23);
    const auto m = oracle::random_mask(rng, n);
    const double ar = attention_ratio(AttentionMap::uniform(n, 0.37), m);
    c.expect(std::abs(ar - 1.0) <= 1e-9, "AR on uniform attention = " + fmt(ar));

    // All attention inside the mask.
    std::uniform_real_distribution<double> u(0.1, 1.0);
    std::vector<double> cells(m.size(), 0.0);
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (m.cells()[i]) cells[i] = u(rng);
    const double conc = attention_ratio(AttentionMap(n, cells), m);
    const double want = static_cast<double>(n * n) / static_cast<double>(m.count());
    c.expect(std::abs(conc - want) <= 1e-9 * want, "concentrated AR " + fmt(conc) + " vs " + fmt(want));

    // KL(M^ || M^) is bounded by the smoothing.
    const auto mhat = normalized_mask(m);
    const double self = kl_divergence(m, AttentionMap(n, mhat));
    c.expect(self >= 0 && self <= static_cast<double>(n * n) * kDefaultEpsilon, "KL(M^||M^) = " + fmt(self));
  }
  for (int t = 0; t < 1000; ++t) {
    const int n = 1 + static_cast<int>(rng() % 12);
    const auto a = oracle::random_map(rng, n);
    const auto m = oracle::random_mask(rng, n);
    const double js = js_divergence(m, a);
    c.expect(js >= 0 && js <= std::log(2.0), "JS out of [0, ln 2]: " + fmt(js));
    const auto p = normalized_mask(m);
    const auto q = smoothed_attention(a, kDefaultEpsilon);
    c.expect(std::abs(js_divergence(p, q) - js_divergence(q, p)) <= 1e-12, "JS not symmetric");
  }
  return c.failure();
}

Failure closed_forms() {
  Checks c;
  const PatchMask corner(2, {1, 0, 0, 0});
  const double kl = kl_divergence(corner, AttentionMap::uniform(2), 1e-8);
  c.expect(std::abs(kl - std::log(4.0)) <= 1e-4, "delta vs uniform KL = " + fmt(kl));
  const double js = js_divergence(corner, AttentionMap(2, {0, 0, 0, 1}), 1e-8);
  c.expect(std::abs(js - std::log(2.0)) <= 1e-3, "disjoint JS = " + fmt(js));
  return c.failure();
}

Failure oracle_equivalence() {
  Checks c;
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 100; ++t) {
    const auto a = oracle::random_map(rng, 6);
    const auto m = oracle::random_mask(rng, 6);
    const auto ga = oracle::to_grid(a);
    const auto gm = oracle::to_grid(m);
    c.expect(std::abs(attention_ratio(a, m) - oracle::ar(ga, gm)) <= 1e-12, "AR differs from oracle");
    c.expect(std::abs(kl_divergence(m, a) - oracle::kl(gm, ga, kDefaultEpsilon)) <= 1e-12, "KL differs from oracle");
    c.expect(std::abs(js_divergence(m, a) - oracle::js(gm, ga, kDefaultEpsilon)) <= 1e-12, "JS differs from oracle");
  }
  std::vector<AnalysisSample> samples;
  for (int i = 0; i < 10; ++i) {
    samples.push_back({"s" + std::to_string(i), oracle::random_stack(rng, 4, 2, 6),
                       oracle::random_stack(rng, 4, 2, 6, SourceKind::reference), oracle::random_mask(rng, 6)});
  }
  const auto r = sweep(samples, {});
  const auto o = oracle::sweep(samples, kDefaultEpsilon);
  for (int l = 0; l < 4; ++l) {
    const auto& s = r.per_layer[l].scores;
    c.expect(std::abs(s.ar - o[l].ar) <= 1e-9 && std::abs(s.kl - o[l].kl) <= 1e-9 && std::abs(s.js - o[l].js) <= 1e-9,
             "sweep layer " + std::to_string(l) + " differs from the flat oracle");
  }
  return c.failure();
}

Failure triage_recovery() {
  Checks c;
  const std::vector<std::pair<int, int>> planted{{0, 5}, {2, 1}, {3, 6}};
  int recovered = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    FixtureSpec spec;
    spec.seed = seed;
    spec.n_samples = 20;
    spec.layers = 4;
    spec.heads = 8;
    spec.plant = PlantSpec{planted, 10.0};
    std::vector<AnalysisSample> cal;
    for (auto& s : synthesize_samples(spec)) cal.push_back({s.meta.sample_id, s.question, s.reference, s.mask});
    const auto ranking = rank_heads(cal);
    std::set<std::pair<int, int>> top;
    for (int i = 0; i < 3; ++i) top.insert({ranking.entries[i].layer, ranking.entries[i].head});
    if (top == std::set<std::pair<int, int>>(planted.begin(), planted.end())) ++recovered;
  }
  c.expect(recovered == 50, "planted heads in top 3 on " + std::to_string(recovered) + "/50 seeds");
  return c.failure();
}

Failure percentile_semantics() {
  Checks c;
  const AttentionMap worked(2, {0.1, 0.2, 0.3, 0.4});
  c.expect(percentile_threshold(worked.cells(), 50) == 0.2, "worked threshold is not 0.2");
  const auto m = suppress_and_binarize(worked, 50);
  c.expect(std::vector<std::uint8_t>(m.cells().begin(), m.cells().end()) == std::vector<std::uint8_t>{0, 0, 1, 1},
           "worked mask is not [[0,0],[1,1]]");

  std::mt19937_64 rng(500);
  const std::vector<double> ps{1, 10, 25, 33.3, 50, 66.7, 75, 90, 99};
  for (int t = 0; t < 500; ++t) {
    const int n = 2 + static_cast<int>(rng() % 10);
    // Coarse values so that ties occur.
    std::vector<double> cells(static_cast<std::size_t>(n) * n);
    for (double& v : cells) v = static_cast<double>(rng() % 8);
    const AttentionMap a(n, cells);
    std::vector<std::uint8_t> prev(cells.size(), 1);
    for (double p : ps) {
      std::vector<std::uint8_t> cur(cells.size(), 0);
      try {
        const auto k = suppress_and_binarize(a, p);
        cur.assign(k.cells().begin(), k.cells().end());
      } catch (const AllSuppressedError&) {
      }
      for (std::size_t i = 0; i < cur.size(); ++i) c.expect(cur[i] <= prev[i], "a cell returned at a higher p");
      prev = cur;
    }
  }
  return c.failure();
}

Failure knockout_contract() {
  Checks c;
  ToyConfig cfg;
  cfg.layers = 6;
  cfg.heads = 4;
  cfg.model_dim = 32;
  cfg.grid_n = 4;
  cfg.vocab_size = 128;
  const auto model = init_model(cfg);
  const auto visual = make_visual_features(cfg, 77);
  const auto tokens = tokenize("Is there a liver in the image?", cfg.vocab_size);
  const auto base = forward(model, visual, tokens);

  auto plan = [&](std::vector<std::uint8_t> cells, std::vector<int> layers) {
    return RefinePlan{KnockoutMask(cfg.grid_n, std::move(cells)), std::move(layers), MaskMode::post_softmax,
                      KnockoutScope::question_only, kDefaultTopK, kDefaultPercentile};
  };

  const auto ones = plan(std::vector<std::uint8_t>(16, 1), {2, 3, 4});
  const auto same = forward(model, visual, tokens, &ones);
  c.expect(same.logits == base.logits, "all-ones mask changed the logits");

  std::vector<std::uint8_t> cells(16, 1);
  cells[5] = 0;
  cells[10] = 0;
  const auto ko_plan = plan(cells, {3, 4});
  const auto ko = forward(model, visual, tokens, &ko_plan);
  for (int l : {3, 4}) {
    for (int h = 0; h < cfg.heads; ++h) {
      const auto& row = ko.last_rows[static_cast<std::size_t>(l * cfg.heads + h)];
      c.expect(row[5] == 0.0 && row[10] == 0.0, "zeroed key is not exactly 0");
    }
  }
  for (int l = 0; l < 3; ++l) {
    for (int h = 0; h < cfg.heads; ++h) {
      const auto idx = static_cast<std::size_t>(l * cfg.heads + h);
      c.expect(ko.last_rows[idx] == base.last_rows[idx], "layer before the knockout changed");
    }
    c.expect(ko.hidden_norms[static_cast<std::size_t>(l)] == base.hidden_norms[static_cast<std::size_t>(l)],
             "hidden state before the knockout changed");
  }

  // Idempotence on captured rows.
  const auto layout = ko.layout;
  for (const auto& row : base.last_rows) {
    const auto once = apply_knockout(row, ko_plan.mask, layout);
    c.expect(apply_knockout(once, ko_plan.mask, layout) == once, "mask application is not idempotent");
  }

  // Tiny instance against the dense oracle.
  const ToyConfig tiny;
  const auto tiny_model = init_model(tiny);
  const auto tiny_visual = make_visual_features(tiny, 3);
  const std::vector<int> tiny_tokens{5, 9, 33};
  const auto got = forward(tiny_model, tiny_visual, tiny_tokens);
  const auto want = oracle::forward(tiny_model, tiny_visual, tiny_tokens);
  for (std::size_t i = 0; i < want.logits.size(); ++i)
    c.expect(std::abs(got.logits[i] - want.logits[i]) <= 1e-6, "tiny forward differs from the dense oracle");
  const std::vector<std::uint8_t> tiny_cells{0, 1, 1, 0};
  const RefinePlan tiny_plan{KnockoutMask(2, tiny_cells), {1}, MaskMode::post_softmax, KnockoutScope::question_only,
                             kDefaultTopK, kDefaultPercentile};
  const auto got_ko = forward(tiny_model, tiny_visual, tiny_tokens, &tiny_plan);
  const auto want_ko = oracle::forward(tiny_model, tiny_visual, tiny_tokens, {1}, tiny_cells);
  for (std::size_t i = 0; i < want_ko.logits.size(); ++i)
    c.expect(std::abs(got_ko.logits[i] - want_ko.logits[i]) <= 1e-6, "tiny knockout differs from the dense oracle");
  return c.failure();
}

Failure defaults_fidelity() {
  Checks c;
  const TriageConfig cfg;
  c.expect(cfg.k == 20 && cfg.p == 50.0 && cfg.knockout_layers == std::vector<int>{16}, "TriageConfig defaults");

  oracle::TempDir root("acc_defaults");
  const auto r = root.path();
  const std::string grid = "6";
  c.expect(run_cli_quiet({"synth", "--out-dir", (r / "cal").string(), "--seed", "1", "--samples", "4", "--grid", grid,
                          "--layers", "4", "--heads", "8", "--plant", "1:1"}) == 0,
           "synth failed");
  c.expect(run_cli_quiet({"synth", "--out-dir", (r / "ana").string(), "--seed", "2", "--samples", "2", "--grid", grid,
                          "--layers", "4", "--heads", "8", "--plant", "1:1", "--split", "analysis"}) == 0,
           "synth failed");
  c.expect(run_cli_quiet({"triage", "--calib-dir", (r / "cal").string(), "--out-dir", (r / "tr").string()}) == 0,
           "triage failed");
  c.expect(run_cli_quiet({"knockout", "--fixture", (r / "ana").string(), "--ranking", (r / "tr" / "ranking.json").string(),
                          "--out-dir", (r / "ko").string()}) == 0,
           "knockout failed");
  if (c.failure()) return c.failure();
  for (const char* sub : {"tr", "ko"}) {
    const auto doc = nlohmann::json::parse(read_file_text(r / sub / "manifest.json"))["config"];
    c.expect(doc["k"] == 20, std::string(sub) + " manifest k");
    c.expect(doc["p"] == 50.0, std::string(sub) + " manifest p");
    c.expect(doc["knockout_layers"] == nlohmann::json::array({16}), std::string(sub) + " manifest layers");
  }
  return c.failure();
}

Failure wire_format() {
  Checks c;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<float> v(32 * 32 * 24 * 24);
    for (float& x : v) {
      std::uint32_t bits;
      do {
        bits = static_cast<std::uint32_t>(rng()) & 0x7FFFFFFFu;
      } while ((bits & 0x7F800000u) == 0x7F800000u);
      x = std::bit_cast<float>(bits);
    }
    const AttentionStack s(32, 32, 24, std::move(v), seed % 2 ? SourceKind::reference : SourceKind::question);
    std::stringstream io;
    write_dump(s, io);
    c.expect(read_dump(io) == s, "seed " + std::to_string(seed) + " did not round-trip");
  }

  std::mt19937_64 rng(9);
  const auto good = encode_dump(oracle::random_stack(rng, 2, 2, 3));
  auto rejects = [&](const std::vector<std::uint8_t>& b, auto tag) {
    try {
      decode_dump(b);
    } catch (const decltype(tag)&) {
      return true;
    } catch (...) {
      return false;
    }
    return false;
  };
  for (std::size_t len = 0; len < good.size(); ++len) {
    const std::vector<std::uint8_t> b(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(len));
    c.expect(rejects(b, TruncationError("")), "truncation to " + std::to_string(len) + " bytes not rejected");
  }
  for (std::size_t i = 0; i < 4; ++i) {
    for (int delta = 1; delta < 256; ++delta) {
      auto b = good;
      b[i] = static_cast<std::uint8_t>(b[i] + delta);
      c.expect(rejects(b, FormatError("")), "corrupted magic byte not rejected");
    }
  }
  for (std::size_t pos = kDumpHeaderSize; pos < good.size(); pos += 4) {
    auto b = good;
    b[pos + 3] |= 0x80;  // set the sign bit
    c.expect(rejects(b, InvariantError("")), "negative value not rejected");
  }
  return c.failure();
}

using Tree = std::map<std::string, std::string>;

Tree snapshot(const fs::path& root) {
  Tree out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::string body = read_file_text(e.path());
    if (e.path().filename() == "manifest.json") {
      auto doc = nlohmann::json::parse(body);
      if (doc.contains("wall_time_s")) doc.erase("wall_time_s");
      if (doc.contains("run") && doc["run"].is_object()) doc["run"].erase("wall_time_s");
      body = doc.dump();
    }
    out[fs::relative(e.path(), root).string()] = body;
  }
  return out;
}

Failure pipeline_determinism() {
  Checks c;
  oracle::TempDir root("acc_determinism");
  const auto r = root.path() / "run";
  auto pipeline = [&] {
    fs::remove_all(r);
    const std::string grid = "8";
    return run_cli_quiet({"synth", "--out-dir", (r / "cal").string(), "--seed", "11", "--samples", "8", "--grid", grid,
                          "--layers", "4", "--heads", "8", "--plant", "0:3,2:2,3:7"}) == 0 &&
           run_cli_quiet({"synth", "--out-dir", (r / "ana").string(), "--seed", "12", "--samples", "3", "--grid", grid,
                          "--layers", "4", "--heads", "8", "--plant", "0:3,2:2,3:7", "--split", "analysis"}) == 0 &&
           run_cli_quiet({"analyze", "--data-dir", (r / "cal").string(), "--out-dir", (r / "an").string(), "--per-head",
                          "--normalize", "--heatmaps"}) == 0 &&
           run_cli_quiet({"triage", "--calib-dir", (r / "cal").string(), "--analysis-dir", (r / "ana").string(),
                          "--out-dir", (r / "tr").string()}) == 0 &&
           run_cli_quiet({"knockout", "--fixture", (r / "ana").string(), "--ranking",
                          (r / "tr" / "ranking.json").string(), "--out-dir", (r / "ko").string()}) == 0;
  };
  c.expect(pipeline(), "first pipeline run failed");
  const Tree first = snapshot(r);
  c.expect(pipeline(), "second pipeline run failed");
  const Tree second = snapshot(r);
  c.expect(first.size() > 20, "pipeline produced too few files");
  c.expect(first == second, "pipeline outputs differ between runs");
  return c.failure();
}

struct Criterion {
  const char* name;
  double budget_s;  // 0 = no stated budget
  std::function<Failure()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"metric identities", 5, metric_identities},
      {"closed forms", 1, closed_forms},
      {"oracle equivalence", 10, oracle_equivalence},
      {"triage recovery", 30, triage_recovery},
      {"percentile semantics", 0, percentile_semantics},
      {"knockout contract", 20, knockout_contract},
      {"defaults fidelity", 0, defaults_fidelity},
      {"wire format", 0, wire_format},
      {"pipeline determinism", 0, pipeline_determinism},
  };
  int failed = 0;
  for (const auto& crit : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Failure f;
    try {
      f = crit.run();
    } catch (const Error& e) {
      f = e.describe();
    } catch (const std::exception& e) {
      f = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!f && crit.budget_s > 0 && secs > crit.budget_s) f = "took " + fmt(secs) + " s, budget " + fmt(crit.budget_s) + " s";
    std::printf("%s  %-22s %7.2f s%s%s\n", f ? "FAIL" : "PASS", crit.name, secs, f ? "  " : "", f ? f->c_str() : "");
    std::fflush(stdout);
    if (f) ++failed;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
