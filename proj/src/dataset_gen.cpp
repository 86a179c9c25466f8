#include "vgkit/dataset_gen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "vgkit/errors.hpp"
#include "vgkit/grounding_metrics.hpp"

namespace vgkit {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::array<std::string_view, 10> kLabels{"liver",  "kidney", "spleen", "polyp",    "nodule",
                                                    "lesion", "tumor",  "cyst",   "fracture", "heart"};
constexpr std::array<std::string_view, 5> kModalities{"CT", "MRI", "X-ray", "Endoscopy", "Ultrasound"};

std::string sample_id_for(const FixtureSpec& spec, int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", i);
  return spec.id_prefix + buf;
}

BBox draw_bbox(const FixtureSpec& spec, SplitMix64& rng) {
  const double w = spec.image_size;
  switch (spec.bbox_mode) {
    case BBoxMode::full:
      return {0, 0, w, w};
    case BBoxMode::quadrant: {
      const auto q = rng.next_below(4);
      const double half = std::floor(w / 2);
      const double x0 = (q % 2) ? half : 0;
      const double y0 = (q / 2) ? half : 0;
      return {x0, y0, (q % 2) ? w : half, (q / 2) ? w : half};
    }
    case BBoxMode::random:
    default: {
      const auto lo = static_cast<std::uint64_t>(std::max(1, spec.image_size / 8));
      const auto hi = static_cast<std::uint64_t>(std::max(1, spec.image_size / 2));
      const auto bw = lo + rng.next_below(hi - lo + 1);
      const auto bh = lo + rng.next_below(hi - lo + 1);
      const auto x0 = rng.next_below(static_cast<std::uint64_t>(spec.image_size) - bw + 1);
      const auto y0 = rng.next_below(static_cast<std::uint64_t>(spec.image_size) - bh + 1);
      return {double(x0), double(y0), double(x0 + bw), double(y0 + bh)};
    }
  }
}

SampleMeta draw_meta(const FixtureSpec& spec, int i, SplitMix64& rng) {
  SampleMeta meta;
  meta.sample_id = sample_id_for(spec, i);
  meta.image_width = spec.image_size;
  meta.image_height = spec.image_size;
  meta.grid_n = spec.grid_n;
  meta.bbox = draw_bbox(spec, rng);
  const auto label = kLabels[rng.next_below(kLabels.size())];
  meta.question = sample_localization_question(label, rng);
  meta.question_kind = QuestionKind::localization;
  meta.modality = std::string(kModalities[rng.next_below(kModalities.size())]);
  return meta;
}

void write_manifest(const FixtureSpec& spec, const fs::path& dir, const std::vector<std::string>& ids,
                    const json& extra_spec, const json& run) {
  json samples = json::array();
  for (const auto& id : ids) samples.push_back({{"sample_id", id}, {"split", spec.split}});
  json doc{{"format", "vgkit-fixture"}, {"version", 1}, {"split", spec.split}};
  doc["spec"] = fixture_spec_to_json(spec);
  if (!extra_spec.is_null()) doc["toy_model"] = extra_spec;
  doc["samples"] = std::move(samples);
  if (!run.is_null()) doc["run"] = run;
  write_file_atomic(dir / "manifest.json", doc.dump(2) + "\n");
}

}  // namespace

std::string QuestionTemplate::render(std::string_view label) const {
  constexpr std::string_view slot = "{label}";
  const auto at = text.find(slot);
  std::string out(text.substr(0, at));
  out += label;
  out += text.substr(at + slot.size());
  return out;
}

BBox bbox_from_mask(std::span<const std::uint8_t> pixels, int width, int height) {
  if (width < 1 || height < 1 || pixels.size() != static_cast<std::size_t>(width) * height) {
    throw ShapeError("pixel mask size does not match width x height");
  }
  int x0 = width, y0 = height, x1 = -1, y1 = -1;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (!pixels[static_cast<std::size_t>(y) * width + x]) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < 0) throw DegenerateMask("segmentation mask has no active pixel");
  return {double(x0), double(y0), double(x1 + 1), double(y1 + 1)};
}

std::string render_localization_question(std::string_view label, std::size_t template_index) {
  if (label.empty()) throw ConfigError("question label must not be empty");
  if (template_index >= kLocalizationTemplates.size()) throw RangeError("template index out of range");
  return kLocalizationTemplates[template_index].render(label);
}

std::string sample_localization_question(std::string_view label, SplitMix64& rng) {
  return render_localization_question(label, rng.next_below(kLocalizationTemplates.size()));
}

std::string_view to_string(BBoxMode mode) {
  switch (mode) {
    case BBoxMode::quadrant: return "quadrant";
    case BBoxMode::full: return "full";
    default: return "random";
  }
}

BBoxMode bbox_mode_from_string(std::string_view s) {
  if (s == "random") return BBoxMode::random;
  if (s == "quadrant") return BBoxMode::quadrant;
  if (s == "full") return BBoxMode::full;
  throw ConfigError("unknown bbox mode '" + std::string(s) + "'");
}

void FixtureSpec::validate() const {
  if (n_samples < 1 || grid_n < 1 || layers < 1 || heads < 1 || image_size < 2) {
    throw ConfigError("fixture counts must be positive (image_size >= 2)");
  }
  if (!(noise >= 0 && noise < 1)) throw ConfigError("noise must lie in [0, 1)");
  if (split.empty() || id_prefix.empty()) throw ConfigError("split and id prefix must be non-empty");
  if (plant) {
    if (!(plant->sharpness > 0)) throw ConfigError("plant sharpness must be positive");
    std::set<std::pair<int, int>> seen;
    for (const auto& [l, h] : plant->aligned_heads) {
      if (l < 0 || l >= layers || h < 0 || h >= heads) {
        throw ConfigError("planted head (" + std::to_string(l) + ", " + std::to_string(h) + ") outside the stack");
      }
      if (!seen.insert({l, h}).second) throw ConfigError("planted heads must be distinct");
    }
  }
}

json fixture_spec_to_json(const FixtureSpec& spec) {
  json doc{{"seed", spec.seed},
           {"n_samples", spec.n_samples},
           {"grid_n", spec.grid_n},
           {"bbox_mode", std::string(to_string(spec.bbox_mode))},
           {"layers", spec.layers},
           {"heads", spec.heads},
           {"image_size", spec.image_size},
           {"noise", spec.noise},
           {"split", spec.split},
           {"id_prefix", spec.id_prefix}};
  if (spec.plant) {
    json heads = json::array();
    for (const auto& [l, h] : spec.plant->aligned_heads) heads.push_back({l, h});
    doc["plant"] = {{"aligned_heads", heads}, {"sharpness", spec.plant->sharpness}};
  } else {
    doc["plant"] = nullptr;
  }
  return doc;
}

std::vector<FixtureSample> synthesize_samples(const FixtureSpec& spec) {
  spec.validate();
  SplitMix64 rng(spec.seed);
  const std::size_t patches = static_cast<std::size_t>(spec.grid_n) * spec.grid_n;
  std::set<std::pair<int, int>> planted;
  if (spec.plant) planted.insert(spec.plant->aligned_heads.begin(), spec.plant->aligned_heads.end());

  std::vector<FixtureSample> out;
  out.reserve(static_cast<std::size_t>(spec.n_samples));
  for (int i = 0; i < spec.n_samples; ++i) {
    FixtureSample s;
    s.meta = draw_meta(spec, i, rng);
    s.mask = rasterize_bbox(s.meta);
    const auto L = static_cast<std::uint32_t>(spec.layers);
    const auto H = static_cast<std::uint32_t>(spec.heads);
    const auto N = static_cast<std::uint32_t>(spec.grid_n);
    s.question = AttentionStack(L, H, N, SourceKind::question);
    s.reference = AttentionStack(L, H, N, SourceKind::reference);
    std::vector<double> cells(patches);
    for (int l = 0; l < spec.layers; ++l) {
      for (int h = 0; h < spec.heads; ++h) {
        const double mass = 0.3 + 0.6 * rng.next_unit();
        if (planted.count({l, h})) {
          const double sharp = spec.plant->sharpness;
          for (std::size_t p = 0; p < patches; ++p) cells[p] = std::exp(sharp * (s.mask.cells()[p] - 1.0));
        } else {
          for (double& c : cells) c = 1.0 + spec.noise * rng.next_symmetric();
        }
        double total = 0;
        for (const double c : cells) total += c;
        auto dst = s.question.mutable_head(static_cast<std::size_t>(l), static_cast<std::size_t>(h));
        for (std::size_t p = 0; p < patches; ++p) dst[p] = static_cast<float>(mass * cells[p] / total);

        const double ref_mass = 0.3 + 0.6 * rng.next_unit();
        auto ref = s.reference.mutable_head(static_cast<std::size_t>(l), static_cast<std::size_t>(h));
        std::fill(ref.begin(), ref.end(), static_cast<float>(ref_mass / static_cast<double>(patches)));
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::string> synthesize_fixture(const FixtureSpec& spec, const fs::path& dir, const json& run) {
  const auto samples = synthesize_samples(spec);
  fs::create_directories(dir);
  std::vector<std::string> ids;
  for (const auto& s : samples) {
    write_sample_files(dir, s.meta, ExportedDumps{s.question, s.reference});
    ids.push_back(s.meta.sample_id);
  }
  write_manifest(spec, dir, ids, nullptr, run);
  return ids;
}

ToyConfig toy_config_for(const FixtureSpec& spec, const ToyFixtureOptions& opts) {
  ToyConfig cfg;
  cfg.layers = spec.layers;
  cfg.heads = spec.heads;
  cfg.model_dim = opts.model_dim;
  cfg.grid_n = spec.grid_n;
  cfg.vocab_size = opts.vocab_size;
  cfg.seed = opts.model_seed;
  cfg.max_text_len = 32;
  cfg.validate();
  return cfg;
}

std::vector<std::string> synthesize_toy_fixture(const FixtureSpec& spec, const ToyFixtureOptions& opts,
                                                const fs::path& dir, const json& run) {
  spec.validate();
  const ToyConfig cfg = toy_config_for(spec, opts);
  ToyModelState model = init_model(cfg);
  if (opts.plant_layer) plant_grounding_layer(model, *opts.plant_layer, opts.plant_gain);
  const auto reference = reference_prompt_tokens(cfg.vocab_size);

  fs::create_directories(dir);
  SplitMix64 rng(spec.seed);
  std::vector<std::string> ids;
  for (int i = 0; i < spec.n_samples; ++i) {
    const SampleMeta meta = draw_meta(spec, i, rng);
    const PatchMask mask = rasterize_bbox(meta);
    const Matrix features = make_visual_features(cfg, derive_seed(spec.seed, meta.sample_id), &mask);
    const auto question = tokenize(meta.question, cfg.vocab_size);
    write_sample_files(dir, meta, export_dumps(model, features, question, reference));
    ids.push_back(meta.sample_id);
  }
  json toy{{"layers", cfg.layers},       {"heads", cfg.heads},   {"model_dim", cfg.model_dim},
           {"grid_n", cfg.grid_n},       {"vocab_size", cfg.vocab_size}, {"seed", cfg.seed},
           {"max_text_len", cfg.max_text_len}};
  toy["plant_layer"] = opts.plant_layer ? json(*opts.plant_layer) : json(nullptr);
  toy["plant_gain"] = opts.plant_gain;
  write_manifest(spec, dir, ids, toy, run);
  return ids;
}

std::vector<LoadedSample> load_fixture(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    IoError e("not a directory");
    e.attach_path(dir.string());
    throw e;
  }
  std::vector<std::pair<std::string, std::string>> entries;  // (id, split)
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    try {
      const json doc = json::parse(read_file_text(manifest));
      for (const auto& s : doc.at("samples")) {
        entries.emplace_back(s.at("sample_id").get<std::string>(), s.value("split", std::string("unspecified")));
      }
    } catch (const json::exception& ex) {
      FormatError e(std::string("malformed manifest: ") + ex.what());
      e.attach_path(manifest.string());
      throw e;
    }
  } else {
    std::vector<std::string> ids;
    constexpr std::string_view suffix = ".meta.json";
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.size() > suffix.size() && name.ends_with(suffix)) ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());
    for (auto& id : ids) entries.emplace_back(std::move(id), "unspecified");
  }
  if (entries.empty()) {
    IoError e("no samples found");
    e.attach_path(dir.string());
    throw e;
  }

  std::vector<LoadedSample> out;
  out.reserve(entries.size());
  for (const auto& [id, split] : entries) {
    try {
      LoadedSample ls;
      ls.meta = load_meta(meta_path(dir, id));
      if (ls.meta.sample_id != id) {
        throw MetaError("sidecar sample_id '" + ls.meta.sample_id + "' does not match its file name");
      }
      ls.split = split;
      ls.sample.sample_id = id;
      ls.sample.question = load_dump(question_dump_path(dir, id));
      ls.sample.reference = load_dump(reference_dump_path(dir, id));
      if (ls.sample.question.source_kind() != SourceKind::question ||
          ls.sample.reference.source_kind() != SourceKind::reference) {
        throw FormatError("dump source_kind flags do not match their file names");
      }
      check_pairing(ls.meta, ls.sample.question);
      check_pairing(ls.meta, ls.sample.reference);
      ls.sample.mask = rasterize_bbox(ls.meta);
      out.push_back(std::move(ls));
    } catch (Error& e) {
      e.attach_sample(id);
      throw;
    }
  }
  return out;
}

std::vector<AnalysisSample> analysis_samples(std::vector<LoadedSample> loaded) {
  std::vector<AnalysisSample> out;
  out.reserve(loaded.size());
  for (auto& l : loaded) out.push_back(std::move(l.sample));
  return out;
}

}  // namespace vgkit
