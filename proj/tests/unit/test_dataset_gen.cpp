#include <doctest.h>

#include <array>
#include <cmath>
#include <fstream>
#include <map>

#include "support/oracles.hpp"
#include "vgkit/dataset_gen.hpp"
#include "vgkit/errors.hpp"
#include "vgkit/vgrefine.hpp"

using namespace vgkit;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    out[fs::relative(e.path(), root).string()] = read_file_text(e.path());
  }
  return out;
}

}  // namespace

TEST_CASE("bbox from a pixel mask") {
  SUBCASE("single pixel") {
    std::vector<std::uint8_t> px(5 * 4, 0);
    px[2 * 5 + 3] = 1;
    const auto b = bbox_from_mask(px, 5, 4);
    CHECK(b.x_min == 3);
    CHECK(b.y_min == 2);
    CHECK(b.x_max == 4);
    CHECK(b.y_max == 3);
  }
  SUBCASE("L-shaped region") {
    std::vector<std::uint8_t> px(6 * 6, 0);
    for (int y = 1; y <= 4; ++y) px[y * 6 + 1] = 1;
    for (int x = 1; x <= 3; ++x) px[4 * 6 + x] = 1;
    const auto b = bbox_from_mask(px, 6, 6);
    CHECK(b.x_min == 1);
    CHECK(b.y_min == 1);
    CHECK(b.x_max == 4);
    CHECK(b.y_max == 5);
  }
  SUBCASE("empty mask") {
    CHECK_THROWS_AS(bbox_from_mask(std::vector<std::uint8_t>(9, 0), 3, 3), DegenerateMask);
  }
  SUBCASE("random masks: box is the tightest container") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 100; ++trial) {
      const int w = 1 + static_cast<int>(rng() % 20), h = 1 + static_cast<int>(rng() % 20);
      std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h);
      for (auto& p : px) p = rng() % 7 == 0;
      px[rng() % px.size()] = 1;
      const auto b = bbox_from_mask(px, w, h);
      int x0 = w, y0 = h, x1 = -1, y1 = -1;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (px[y * w + x]) {
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
          }
      CHECK(b.x_min == x0);
      CHECK(b.y_min == y0);
      CHECK(b.x_max == x1 + 1);
      CHECK(b.y_max == y1 + 1);
    }
  }
}

TEST_CASE("localization templates") {
  CHECK(kLocalizationTemplates.size() == 10);
  CHECK(render_localization_question("cat", 0) == "Is there a cat in the image?");
  CHECK(render_localization_question("dog", 8) == "Does this image show a dog?");
  for (const auto& t : kLocalizationTemplates) {
    CHECK(t.kind == QuestionKind::localization);
    const auto pos = t.text.find("{label}");
    REQUIRE(pos != std::string_view::npos);
    CHECK(t.text.find("{label}", pos + 1) == std::string_view::npos);
  }
  CHECK_THROWS(render_localization_question("cat", 10));
}

TEST_CASE("template sampling is uniform") {
  std::map<std::string, int> counts;
  SplitMix64 rng(123);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[sample_localization_question("kite", rng)];
  REQUIRE(counts.size() == 10);
  // Each count is Binomial(10000, 0.1): sd = 30.
  double chi2 = 0;
  for (const auto& [q, c] : counts) {
    CHECK(std::abs(c - 1000) <= 90);
    chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
  }
  CHECK(chi2 < 27.88);  // 99.9th percentile of chi-square with 9 dof
}

TEST_CASE("FixtureSpec validation") {
  FixtureSpec spec;
  CHECK_NOTHROW(spec.validate());
  spec.n_samples = 0;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = FixtureSpec{};
  spec.plant = PlantSpec{{{4, 0}}, 10.0};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = FixtureSpec{};
  spec.split = "";
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("full-image boxes give all-ones masks and AR 1") {
  FixtureSpec spec;
  spec.bbox_mode = BBoxMode::full;
  spec.grid_n = 6;
  spec.n_samples = 3;
  for (const auto& s : synthesize_samples(spec)) {
    CHECK(s.mask.count() == 36);
    CHECK(attention_ratio(layer_average(s.question, 0).map, s.mask) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.meta.question_kind == QuestionKind::localization);
  }
}

TEST_CASE("planted heads beat unplanted heads on every seed") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    FixtureSpec spec;
    spec.seed = seed;
    spec.n_samples = 3;
    spec.grid_n = 12;
    spec.plant = PlantSpec{{{2, 3}}, 10.0};
    for (const auto& s : synthesize_samples(spec)) {
      const double planted = kl_divergence(s.mask, head_map(s.question, 2, 3));
      for (int l = 0; l < spec.layers; ++l)
        for (int h = 0; h < spec.heads; ++h)
          if (!(l == 2 && h == 3)) CHECK(planted < kl_divergence(s.mask, head_map(s.question, l, h)));
    }
  }
}

TEST_CASE("planted head ranks first") {
  FixtureSpec spec;
  spec.seed = 4;
  spec.n_samples = 10;
  spec.grid_n = 12;
  spec.plant = PlantSpec{{{2, 3}}, 10.0};
  std::vector<AnalysisSample> cal;
  for (auto& s : synthesize_samples(spec)) cal.push_back({s.meta.sample_id, s.question, s.reference, s.mask});
  const auto r = rank_heads(cal);
  CHECK(r.entries[0].layer == 2);
  CHECK(r.entries[0].head == 3);
}

TEST_CASE("fixtures on disk are byte-identical per seed and load back") {
  FixtureSpec spec;
  spec.seed = 9;
  spec.n_samples = 4;
  spec.grid_n = 8;
  spec.plant = PlantSpec{{{1, 1}}, 10.0};
  oracle::TempDir a("fx_a"), b("fx_b");
  const auto ids = synthesize_fixture(spec, a.path());
  synthesize_fixture(spec, b.path());
  CHECK(ids.size() == 4);
  CHECK(read_tree(a.path()) == read_tree(b.path()));

  const auto loaded = load_fixture(a.path());
  REQUIRE(loaded.size() == 4);
  CHECK(loaded[0].split == "calibration");
  CHECK(loaded[0].sample.question.source_kind() == SourceKind::question);
  CHECK(loaded[0].sample.reference.source_kind() == SourceKind::reference);
  CHECK(loaded[0].sample.mask == rasterize_bbox(loaded[0].meta));

  // The in-memory samples are what was written.
  const auto mem = synthesize_samples(spec);
  CHECK(mem[2].question == loaded[2].sample.question);

  spec.seed = 10;
  oracle::TempDir c("fx_c");
  synthesize_fixture(spec, c.path());
  CHECK(read_tree(a.path()) != read_tree(c.path()));
}

TEST_CASE("load_fixture without a manifest and with broken files") {
  FixtureSpec spec;
  spec.n_samples = 2;
  spec.grid_n = 4;
  oracle::TempDir dir("fx_nomani");
  const auto ids = synthesize_fixture(spec, dir.path());
  fs::remove(dir.path() / "manifest.json");
  const auto loaded = load_fixture(dir.path());
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].split == "unspecified");

  // Swap in a reference dump where a question dump belongs.
  fs::copy_file(reference_dump_path(dir.path(), ids[0]), question_dump_path(dir.path(), ids[0]),
                fs::copy_options::overwrite_existing);
  CHECK_THROWS_AS(load_fixture(dir.path()), Error);

  oracle::TempDir empty("fx_empty");
  CHECK_THROWS_AS(load_fixture(empty.path()), Error);
}

TEST_CASE("toy-model fixtures") {
  FixtureSpec spec;
  spec.seed = 3;
  spec.n_samples = 4;
  spec.grid_n = 4;
  spec.layers = 4;
  spec.heads = 2;
  ToyFixtureOptions opts;
  opts.plant_layer = 2;
  oracle::TempDir dir("fx_toy");
  synthesize_toy_fixture(spec, opts, dir.path());
  const auto samples = analysis_samples(load_fixture(dir.path()));
  REQUIRE(samples.size() == 4);
  CHECK(samples[0].question.layers() == 4);
  CHECK(samples[0].question.heads() == 2);
  CHECK(best_layer(sweep(samples, {})) == 2);
}
