#include "vgkit/cli.hpp"

#include <chrono>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "vgkit/attention_analysis.hpp"
#include "vgkit/dataset_gen.hpp"
#include "vgkit/errors.hpp"
#include "vgkit/grounding_metrics.hpp"
#include "vgkit/report.hpp"
#include "vgkit/tensor_io.hpp"
#include "vgkit/toy_mllm.hpp"
#include "vgkit/vgrefine.hpp"

namespace vgkit {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// "16", "34,35,36", "" or "none".
std::vector<int> parse_layer_list(const std::string& text) {
  std::vector<int> layers;
  if (text.empty() || text == "none") return layers;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      layers.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("cannot parse layer list '" + text + "'");
    }
  }
  return layers;
}

// "layer:head,layer:head"
std::vector<std::pair<int, int>> parse_heads(const std::string& text) {
  std::vector<std::pair<int, int>> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(item);
      out.emplace_back(std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1)));
    } catch (const std::exception&) {
      throw ConfigError("cannot parse head list '" + text + "' (expected layer:head,...)");
    }
  }
  return out;
}

void reject_split(const std::vector<LoadedSample>& samples, const std::string& forbidden, const std::string& why) {
  for (const auto& s : samples) {
    if (s.split == forbidden) {
      ConfigError e(why);
      e.attach_sample(s.meta.sample_id);
      throw e;
    }
  }
}

void reject_overlap(const std::vector<LoadedSample>& samples, const std::vector<std::string>& calibration_ids) {
  const std::set<std::string> calib(calibration_ids.begin(), calibration_ids.end());
  for (const auto& s : samples) {
    if (calib.count(s.meta.sample_id)) {
      ConfigError e("sample is part of the calibration set used for head ranking");
      e.attach_sample(s.meta.sample_id);
      throw e;
    }
  }
}

// --- synth -------------------------------------------------------------------

struct SynthArgs {
  std::string out_dir;
  std::uint64_t seed = 0;
  int samples = 8;
  int grid = 24;
  int layers = 4;
  int heads = 8;
  int image_size = 336;
  std::string bbox_mode = "random";
  std::string plant;
  double sharpness = 10.0;
  double noise = 0.01;
  std::string split = "calibration";
  std::string id_prefix;
  std::string source = "planted";
  int toy_dim = 16;
  int toy_vocab = 64;
  std::uint64_t model_seed = 42;
  int plant_layer = -1;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  FixtureSpec spec;
  spec.seed = a.seed;
  spec.n_samples = a.samples;
  spec.grid_n = a.grid;
  spec.layers = a.layers;
  spec.heads = a.heads;
  spec.image_size = a.image_size;
  spec.bbox_mode = bbox_mode_from_string(a.bbox_mode);
  spec.noise = a.noise;
  if (a.split != "calibration" && a.split != "analysis") {
    throw ConfigError("--split must be 'calibration' or 'analysis'");
  }
  spec.split = a.split;
  spec.id_prefix = a.id_prefix.empty() ? (a.split == "calibration" ? "cal" : "ana") : a.id_prefix;
  if (!a.plant.empty()) spec.plant = PlantSpec{parse_heads(a.plant), a.sharpness};
  spec.validate();

  RunManifest run;
  run.command = "synth";
  run.tool_version = tool_version();
  run.config = fixture_spec_to_json(spec);
  run.config["source"] = a.source;

  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  std::vector<std::string> ids;
  if (a.source == "planted") {
    ids = synthesize_fixture(spec, dir);
  } else if (a.source == "toy") {
    ToyFixtureOptions opts;
    opts.model_dim = a.toy_dim;
    opts.vocab_size = a.toy_vocab;
    opts.model_seed = a.model_seed;
    if (a.plant_layer >= 0) opts.plant_layer = a.plant_layer;
    if (opts.plant_layer && *opts.plant_layer >= spec.layers) throw ConfigError("--plant-layer outside the model");
    run.config["model_seed"] = a.model_seed;
    ids = synthesize_toy_fixture(spec, opts, dir);
  } else {
    throw ConfigError("--source must be 'planted' or 'toy'");
  }
  // Re-write the manifest with the run record now that wall time is known.
  run.wall_time_s = seconds_since(start);
  json manifest = json::parse(read_file_text(dir / "manifest.json"));
  manifest["run"] = run.to_json();
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  out << "synth: wrote " << ids.size() << " samples to " << dir.string() << "\n";
  return kExitOk;
}

// --- analyze -----------------------------------------------------------------

struct AnalyzeArgs {
  std::string data_dir;
  std::string out_dir;
  double eps = kDefaultEpsilon;
  bool normalize = false;
  bool per_head = false;
  std::string reference_mode = "ratio";
  bool heatmaps = false;
};

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  if (!(a.eps > 0)) throw ConfigError("--eps must be positive");
  SweepConfig cfg;
  cfg.eps = a.eps;
  cfg.normalize = a.normalize;
  cfg.per_head = a.per_head;
  cfg.reference_mode = reference_mode_from_string(a.reference_mode);

  auto loaded = load_fixture(a.data_dir);
  std::vector<SampleMeta> metas;
  for (const auto& l : loaded) metas.push_back(l.meta);
  const auto samples = analysis_samples(std::move(loaded));
  const SweepResult result = sweep(samples, cfg);

  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  write_file_atomic(dir / "sweep.csv", sweep_to_csv(result));
  write_file_atomic(dir / "sweep.json", sweep_to_json(result).dump(2) + "\n");
  write_file_atomic(dir / "per_sample.csv", per_sample_to_csv(result));
  std::string curves = "layer,ar,kl,js\n";
  for (const auto& l : result.per_layer) {
    curves += std::to_string(l.layer) + ',' + format_double(l.scores.ar) + ',' + format_double(l.scores.kl) + ',' +
              format_double(l.scores.js) + '\n';
  }
  write_file_atomic(dir / "layer_curves.csv", curves);

  const int best = best_layer(result);
  if (a.heatmaps) {
    fs::create_directories(dir / "heatmaps");
    for (const auto& s : samples) {
      auto map = layer_average(s.question, best).map;
      if (cfg.normalize) {
        map = normalize_by_reference(map, layer_average(s.reference, best).map, cfg.eps, cfg.reference_mode);
      }
      render_heatmap(map, s.mask, dir / "heatmaps" / (s.sample_id + ".ppm"));
    }
  }

  RunManifest run;
  run.command = "analyze";
  run.tool_version = tool_version();
  run.config = json{{"eps", cfg.eps},
                    {"normalize", cfg.normalize},
                    {"per_head", cfg.per_head},
                    {"reference_mode", std::string(to_string(cfg.reference_mode))},
                    {"heatmaps", a.heatmaps},
                    {"aggregation", result.aggregation},
                    {"log_base", "e"}};
  run.inputs = json{{"data_dir", a.data_dir}, {"sample_count", samples.size()}};
  run.wall_time_s = seconds_since(start);
  write_run_manifest(dir, run);
  out << "analyze: " << samples.size() << " samples, best layer " << best << "\n";
  return kExitOk;
}

// --- triage ------------------------------------------------------------------

struct TriageArgs {
  std::string calib_dir;
  std::string out_dir;
  std::string analysis_dir;
  int k = kDefaultTopK;
  double p = kDefaultPercentile;
  double eps = kDefaultEpsilon;
  std::string layers = std::to_string(kDefaultKnockoutLayer);
};

int cmd_triage(const TriageArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  TriageConfig cfg;
  cfg.k = a.k;
  cfg.p = a.p;
  cfg.eps = a.eps;
  cfg.knockout_layers = parse_layer_list(a.layers);

  auto calib = load_fixture(a.calib_dir);
  reject_split(calib, "analysis", "calibration directory contains samples tagged 'analysis'");
  const auto& first = calib.front().sample.question;
  // Knockout layers refer to the model the plan will run on, which triage
  // does not see; only k and p are checked against the calibration stacks.
  cfg.validate(static_cast<int>(first.layers() * first.heads()), std::numeric_limits<int>::max());
  const auto samples = analysis_samples(std::move(calib));
  const HeadRanking ranking = rank_heads(samples, cfg.eps);

  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  write_file_atomic(dir / "ranking.json", ranking_to_json(ranking).dump(2) + "\n");
  write_file_atomic(dir / "triage_config.json", config_to_json(cfg).dump(2) + "\n");

  std::size_t masks = 0;
  if (!a.analysis_dir.empty()) {
    const auto analysis = load_fixture(a.analysis_dir);
    reject_split(analysis, "calibration", "analysis directory contains samples tagged 'calibration'");
    reject_overlap(analysis, ranking.calibration_ids);
    fs::create_directories(dir / "masks");
    std::string lines;
    for (const auto& s : analysis) {
      try {
        const auto aggregate = aggregate_topk(ranking, s.sample.question, s.sample.reference, cfg.k, cfg.eps);
        const auto mask = suppress_and_binarize(aggregate, cfg.p);
        json doc = mask_to_json(mask);
        doc["sample_id"] = s.meta.sample_id;
        write_file_atomic(dir / "masks" / (s.meta.sample_id + ".mask.json"), doc.dump(2) + "\n");
        lines += s.meta.sample_id + ' ' + mask.to_rle() + '\n';
        ++masks;
      } catch (Error& e) {
        e.attach_sample(s.meta.sample_id);
        throw;
      }
    }
    write_file_atomic(dir / "masks.txt", lines);
  }

  RunManifest run;
  run.command = "triage";
  run.tool_version = tool_version();
  run.config = config_to_json(cfg);
  run.inputs = json{{"calib_dir", a.calib_dir}, {"calibration_size", ranking.calibration_size}};
  if (!a.analysis_dir.empty()) run.inputs["analysis_dir"] = a.analysis_dir;
  run.wall_time_s = seconds_since(start);
  write_run_manifest(dir, run);
  const auto& top = ranking.entries.front();
  out << "triage: top head (" << top.layer << ", " << top.head << ") mean_kl " << format_double(top.mean_kl)
      << "; " << masks << " masks\n";
  return kExitOk;
}

// --- knockout ----------------------------------------------------------------

struct KnockoutArgs {
  std::uint64_t model_seed = 42;
  std::string fixture;
  std::string ranking;
  std::string out_dir;
  std::string layers = std::to_string(kDefaultKnockoutLayer);
  std::string mask_mode = "post_softmax";
  std::string scope = "question_only";
  int k = kDefaultTopK;
  double p = kDefaultPercentile;
  double eps = kDefaultEpsilon;
  int toy_layers = 18;
  int toy_heads = 4;
  int toy_dim = 32;
  int toy_vocab = 256;
  int toy_max_text = 64;
};

int cmd_knockout(const KnockoutArgs& a, std::ostream& out) {
  const auto start = Clock::now();
  TriageConfig cfg;
  cfg.k = a.k;
  cfg.p = a.p;
  cfg.eps = a.eps;
  cfg.knockout_layers = parse_layer_list(a.layers);
  cfg.mask_mode = mask_mode_from_string(a.mask_mode);
  cfg.scope = knockout_scope_from_string(a.scope);

  json ranking_doc;
  try {
    ranking_doc = json::parse(read_file_text(a.ranking));
  } catch (const json::exception& ex) {
    FormatError e(std::string("malformed ranking file: ") + ex.what());
    e.attach_path(a.ranking);
    throw e;
  }
  const HeadRanking ranking = ranking_from_json(ranking_doc);

  const auto samples = load_fixture(a.fixture);
  reject_split(samples, "calibration", "knockout fixture contains samples tagged 'calibration'");
  reject_overlap(samples, ranking.calibration_ids);

  ToyConfig toy;
  toy.layers = a.toy_layers;
  toy.heads = a.toy_heads;
  toy.model_dim = a.toy_dim;
  toy.vocab_size = a.toy_vocab;
  toy.max_text_len = a.toy_max_text;
  toy.seed = a.model_seed;
  toy.grid_n = samples.front().meta.grid_n;
  toy.validate();
  cfg.validate(static_cast<int>(ranking.entries.size()), toy.layers);
  const ToyModelState model = init_model(toy);

  const fs::path dir(a.out_dir);
  fs::create_directories(dir / "traces");
  fs::create_directories(dir / "logits");
  fs::create_directories(dir / "masks");
  std::string summary = "sample_id,kept_fraction,max_abs_logit_delta,l2_logit_delta,argmax_baseline,argmax_knockout\n";
  for (const auto& s : samples) {
    try {
      if (s.meta.grid_n != toy.grid_n) throw ShapeError("fixture mixes patch grids");
      const RefinePlan plan = build_refine_plan(ranking, cfg, s.sample.question, s.sample.reference, toy.layers);
      const Matrix features = make_visual_features(toy, derive_seed(a.model_seed, s.meta.sample_id), &s.sample.mask);
      auto tokens = tokenize(s.meta.question, toy.vocab_size);
      if (tokens.empty()) throw ShapeError("question has no tokens");
      if (tokens.size() > static_cast<std::size_t>(toy.max_text_len)) tokens.resize(static_cast<std::size_t>(toy.max_text_len));

      const ForwardTrace baseline = forward(model, features, tokens);
      const ForwardTrace knocked = forward(model, features, tokens, &plan);
      save_dump(baseline.attention, dir / "traces" / (s.meta.sample_id + ".baseline.vgat"));
      save_dump(knocked.attention, dir / "traces" / (s.meta.sample_id + ".knockout.vgat"));

      std::string logits = "index,baseline,knockout,delta\n";
      double max_abs = 0;
      double l2 = 0;
      for (std::size_t i = 0; i < baseline.logits.size(); ++i) {
        const double d = knocked.logits[i] - baseline.logits[i];
        max_abs = std::max(max_abs, std::abs(d));
        l2 += d * d;
        logits += std::to_string(i) + ',' + format_double(baseline.logits[i]) + ',' +
                  format_double(knocked.logits[i]) + ',' + format_double(d) + '\n';
      }
      write_file_atomic(dir / "logits" / (s.meta.sample_id + ".csv"), logits);
      json mask_doc = plan_to_json(plan);
      mask_doc["sample_id"] = s.meta.sample_id;
      write_file_atomic(dir / "masks" / (s.meta.sample_id + ".plan.json"), mask_doc.dump(2) + "\n");

      auto argmax = [](const std::vector<double>& v) {
        return std::distance(v.begin(), std::max_element(v.begin(), v.end()));
      };
      summary += s.meta.sample_id + ',' + format_double(plan.mask.kept_fraction()) + ',' + format_double(max_abs) +
                 ',' + format_double(std::sqrt(l2)) + ',' + std::to_string(argmax(baseline.logits)) + ',' +
                 std::to_string(argmax(knocked.logits)) + '\n';
    } catch (Error& e) {
      e.attach_sample(s.meta.sample_id);
      throw;
    }
  }
  write_file_atomic(dir / "knockout.csv", summary);

  RunManifest run;
  run.command = "knockout";
  run.tool_version = tool_version();
  run.config = config_to_json(cfg);
  std::set<int> unique_layers(cfg.knockout_layers.begin(), cfg.knockout_layers.end());
  run.config["knockout_layers"] = std::vector<int>(unique_layers.begin(), unique_layers.end());
  run.config["toy_model"] = json{{"layers", toy.layers},         {"heads", toy.heads},
                                 {"model_dim", toy.model_dim},   {"grid_n", toy.grid_n},
                                 {"vocab_size", toy.vocab_size}, {"seed", toy.seed},
                                 {"max_text_len", toy.max_text_len}};
  run.inputs = json{{"fixture", a.fixture}, {"ranking", a.ranking}, {"sample_count", samples.size()}};
  run.wall_time_s = seconds_since(start);
  write_run_manifest(dir, run);
  out << "knockout: " << samples.size() << " samples, layers " << a.layers << "\n";
  return kExitOk;
}

// --- render ------------------------------------------------------------------

struct RenderArgs {
  std::string dump;
  std::string meta;
  std::string reference;
  std::string out;
  int layer = -1;
  int head = -1;
  double eps = kDefaultEpsilon;
  int scale = kHeatmapScale;
};

int cmd_render(const RenderArgs& a, std::ostream& out) {
  const AttentionStack stack = load_dump(a.dump);
  const SampleMeta meta = load_meta(a.meta);
  check_pairing(meta, stack);
  const PatchMask mask = rasterize_bbox(meta);
  std::optional<AttentionStack> ref;
  if (!a.reference.empty()) {
    ref = load_dump(a.reference);
    check_pairing(meta, *ref);
  }
  auto map_at = [&](int layer) {
    AttentionMap m = a.head >= 0 ? head_map(stack, layer, a.head) : layer_average(stack, layer).map;
    if (ref) {
      const AttentionMap r = a.head >= 0 ? head_map(*ref, layer, a.head) : layer_average(*ref, layer).map;
      m = normalize_by_reference(m, r, a.eps);
    }
    return m;
  };
  if (a.head >= static_cast<int>(stack.heads())) throw ConfigError("--head outside the dump");
  int layer = a.layer;
  if (layer >= static_cast<int>(stack.layers())) throw ConfigError("--layer outside the dump");
  if (layer < 0) {
    double best = std::numeric_limits<double>::infinity();
    for (int l = 0; l < static_cast<int>(stack.layers()); ++l) {
      const double kl = kl_divergence(mask, map_at(l), a.eps);
      if (kl < best) {
        best = kl;
        layer = l;
      }
    }
  }
  render_heatmap(map_at(layer), mask, a.out, a.scale);
  out << "render: layer " << layer << " -> " << a.out << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"vgkit: visual grounding analysis and attention knockout toolkit", "vgkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tool_version());

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a fixture of dumps and sidecars");
  s->add_option("--out-dir", synth.out_dir, "Output directory")->required();
  s->add_option("--seed", synth.seed, "Fixture seed");
  s->add_option("--samples", synth.samples, "Number of samples");
  s->add_option("--grid", synth.grid, "Patch-grid side N");
  s->add_option("--layers", synth.layers, "Layers L");
  s->add_option("--heads", synth.heads, "Heads H");
  s->add_option("--image-size", synth.image_size, "Square image side in pixels");
  s->add_option("--bbox-mode", synth.bbox_mode, "random | quadrant | full");
  s->add_option("--plant", synth.plant, "Aligned heads, layer:head,...");
  s->add_option("--sharpness", synth.sharpness, "Planted head sharpness");
  s->add_option("--noise", synth.noise, "Relative noise on unplanted heads");
  s->add_option("--split", synth.split, "calibration | analysis");
  s->add_option("--id-prefix", synth.id_prefix, "Sample id prefix");
  s->add_option("--source", synth.source, "planted | toy");
  s->add_option("--toy-dim", synth.toy_dim, "Toy model width (source=toy)");
  s->add_option("--toy-vocab", synth.toy_vocab, "Toy vocabulary size (source=toy)");
  s->add_option("--model-seed", synth.model_seed, "Toy model seed (source=toy)");
  s->add_option("--plant-layer", synth.plant_layer, "Toy layer rewired to attend to the box (source=toy)");

  AnalyzeArgs analyze;
  auto* an = app.add_subcommand("analyze", "Layer / head grounding sweep over a sample directory");
  an->add_option("--data-dir", analyze.data_dir, "Directory of dumps and sidecars")->required();
  an->add_option("--out-dir", analyze.out_dir, "Output directory")->required();
  an->add_option("--eps", analyze.eps, "Smoothing epsilon");
  an->add_flag("--normalize", analyze.normalize, "Normalize by the reference-prompt map");
  an->add_flag("--per-head", analyze.per_head, "Also score every head");
  an->add_option("--reference-mode", analyze.reference_mode, "ratio | subtract");
  an->add_flag("--heatmaps", analyze.heatmaps, "Render best-layer heatmaps per sample");

  TriageArgs triage;
  auto* tr = app.add_subcommand("triage", "Rank heads on a calibration set and build knockout masks");
  tr->add_option("--calib-dir", triage.calib_dir, "Calibration sample directory")->required();
  tr->add_option("--out-dir", triage.out_dir, "Output directory")->required();
  tr->add_option("--analysis-dir", triage.analysis_dir, "Analysis samples to build masks for");
  tr->add_option("--k", triage.k, "Number of top heads");
  tr->add_option("--p", triage.p, "Suppression percentile in (0, 100)");
  tr->add_option("--eps", triage.eps, "Smoothing epsilon");
  tr->add_option("--layers", triage.layers, "Knockout layers recorded in the config");

  KnockoutArgs knock;
  auto* ko = app.add_subcommand("knockout", "Run the toy model with and without attention knockout");
  ko->add_option("--model-seed", knock.model_seed, "Toy model seed");
  ko->add_option("--fixture", knock.fixture, "Analysis sample directory")->required();
  ko->add_option("--ranking", knock.ranking, "ranking.json from triage")->required();
  ko->add_option("--out-dir", knock.out_dir, "Output directory")->required();
  ko->add_option("--layers", knock.layers, "Knockout layers, e.g. 16 or 34,35,36 (empty = none)");
  ko->add_option("--mask-mode", knock.mask_mode, "post_softmax | pre_softmax");
  ko->add_option("--scope", knock.scope, "question_only | question_and_generated");
  ko->add_option("--k", knock.k, "Number of top heads");
  ko->add_option("--p", knock.p, "Suppression percentile in (0, 100)");
  ko->add_option("--eps", knock.eps, "Smoothing epsilon");
  ko->add_option("--toy-layers", knock.toy_layers, "Toy model layers");
  ko->add_option("--toy-heads", knock.toy_heads, "Toy model heads");
  ko->add_option("--toy-dim", knock.toy_dim, "Toy model width");
  ko->add_option("--toy-vocab", knock.toy_vocab, "Toy vocabulary size");
  ko->add_option("--toy-max-text", knock.toy_max_text, "Toy maximum text length");

  RenderArgs render;
  auto* re = app.add_subcommand("render", "Render one attention map as a PPM heatmap");
  re->add_option("--dump", render.dump, "Question dump (.vgat)")->required();
  re->add_option("--meta", render.meta, "Sidecar (.meta.json)")->required();
  re->add_option("--reference", render.reference, "Reference dump for normalization");
  re->add_option("--out", render.out, "Output .ppm path")->required();
  re->add_option("--layer", render.layer, "Layer (default: lowest KL)");
  re->add_option("--head", render.head, "Head (default: mean over heads)");
  re->add_option("--eps", render.eps, "Smoothing epsilon");
  re->add_option("--scale", render.scale, "Pixels per cell");

  std::vector<const char*> argv{"vgkit"};
  for (const auto& arg : args) argv.push_back(arg.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*an) return cmd_analyze(analyze, out);
    if (*tr) return cmd_triage(triage, out);
    if (*ko) return cmd_knockout(knock, out);
    if (*re) return cmd_render(render, out);
  } catch (const ConfigError& e) {
    err << "vgkit: usage " << e.describe() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "vgkit: " << e.describe() << "\n";
    return kExitDataError;
  } catch (const std::exception& e) {
    err << "vgkit: error=Exception detail=\"" << e.what() << "\"\n";
    return kExitDataError;
  }
  return kExitUsage;
}

}  // namespace vgkit
