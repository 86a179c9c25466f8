#include <doctest.h>

#include <cmath>
#include <random>

#include "support/oracles.hpp"
#include "vgkit/errors.hpp"
#include "vgkit/grounding_metrics.hpp"

using namespace vgkit;

namespace {

PatchMask quadrant_mask() { return PatchMask(2, {1, 0, 0, 0}); }

}  // namespace

TEST_CASE("attention ratio worked example") {
  const AttentionMap a(2, {0.4, 0.2, 0.2, 0.2});
  CHECK(attention_ratio(a, quadrant_mask()) == doctest::Approx(1.6).epsilon(1e-12));
}

TEST_CASE("uniform attention against a quadrant mask") {
  // Values from an independent Python computation.
  const auto s = score(AttentionMap::uniform(2), quadrant_mask());
  CHECK(s.ar == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.kl == doctest::Approx(1.3862943611198906).epsilon(1e-9));
  CHECK(s.js == doctest::Approx(0.3803956658485779).epsilon(1e-9));
  CHECK(s.epsilon_used == kDefaultEpsilon);
}

TEST_CASE("delta attention matching a single-cell mask") {
  const AttentionMap a(3, {0, 0, 0, 0, 1, 0, 0, 0, 0});
  PatchMask m(3);
  m.set(1, 1, true);
  const auto s = score(a, m);
  CHECK(s.ar == doctest::Approx(9.0));
  CHECK(s.kl < 1e-6);
  CHECK(s.js < 1e-6);
}

TEST_CASE("delta versus uniform mask gives ln 4 and disjoint support gives ln 2") {
  // Single-cell mask against uniform attention.
  CHECK(std::abs(kl_divergence(quadrant_mask(), AttentionMap::uniform(2)) - std::log(4.0)) < 1e-4);
  const AttentionMap corner(2, {0, 0, 0, 1});
  CHECK(std::abs(js_divergence(quadrant_mask(), corner) - std::log(2.0)) < 1e-3);
  CHECK(js_divergence(quadrant_mask(), corner) <= std::log(2.0));
}

TEST_CASE("properties over random pairs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 8);
    const auto a = oracle::random_map(rng, n);
    const auto m = oracle::random_mask(rng, n);
    const auto s = score(a, m);
    CHECK(s.ar >= 0);
    CHECK(s.kl >= 0);
    CHECK(s.js >= 0);
    CHECK(s.js <= std::log(2.0));

    // Rescaling A changes nothing.
    std::vector<double> scaled(a.cells().begin(), a.cells().end());
    const double c = std::pow(10.0, static_cast<double>(rng() % 13) - 6.0);
    for (double& v : scaled) v *= c;
    const auto t = score(AttentionMap(n, scaled), m);
    CHECK(std::abs(t.ar - s.ar) <= 1e-12 * std::max(1.0, s.ar));
    CHECK(std::abs(t.kl - s.kl) <= 1e-9);
    CHECK(std::abs(t.js - s.js) <= 1e-9);

    // Full mask: AR is exactly 1.
    CHECK(attention_ratio(a, PatchMask::full(n)) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("AR of a proportional map is 1/||M||-scaled") {
  // A = M -> AR = N^2 / ||M||.
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = oracle::random_mask(rng, 5);
    std::vector<double> cells(m.cells().begin(), m.cells().end());
    CHECK(attention_ratio(AttentionMap(5, cells), m) ==
          doctest::Approx(25.0 / static_cast<double>(m.count())).epsilon(1e-12));
  }
}

TEST_CASE("library agrees with the loop oracle on random 6x6 pairs") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = oracle::random_map(rng, 6);
    const auto m = oracle::random_mask(rng, 6);
    const auto s = score(a, m);
    const auto ga = oracle::to_grid(a);
    const auto gm = oracle::to_grid(m);
    CHECK(std::abs(s.ar - oracle::ar(ga, gm)) < 1e-12);
    CHECK(std::abs(s.kl - oracle::kl(gm, ga, kDefaultEpsilon)) < 1e-12);
    CHECK(std::abs(s.js - oracle::js(gm, ga, kDefaultEpsilon)) < 1e-12);
  }
}

TEST_CASE("degenerate inputs are rejected") {
  CHECK_THROWS_AS(score(AttentionMap::uniform(2, 0.0), quadrant_mask()), DegenerateInput);
  CHECK_THROWS_AS(score(AttentionMap::uniform(2), PatchMask(2)), DegenerateInput);
  CHECK_THROWS_AS(score(AttentionMap::uniform(3), quadrant_mask()), ShapeError);
  CHECK_THROWS_AS(kl_divergence(quadrant_mask(), AttentionMap::uniform(2), 0.0), DegenerateInput);
  CHECK_THROWS_AS(AttentionMap(2, {0.1, -0.1, 0, 0}), InvariantError);
  CHECK_THROWS_AS(PatchMask(2, {0, 2, 0, 0}), InvariantError);
}

TEST_CASE("bbox rasterization") {
  SUBCASE("worked example at 336 px, N = 24") {
    const auto m = rasterize_bbox(BBox{100, 100, 150, 150}, 336, 336, 24);
    CHECK(m.count() == 16);
    for (int i = 0; i < 24; ++i)
      for (int j = 0; j < 24; ++j) CHECK(m.at(i, j) == (i >= 7 && i <= 10 && j >= 7 && j <= 10));
  }
  SUBCASE("full image covers everything") {
    CHECK(rasterize_bbox(BBox{0, 0, 336, 336}, 336, 336, 24).count() == 576);
  }
  SUBCASE("edges touching a patch border do not activate it") {
    // Patch 1 spans [14, 28); a box ending at 14 stays in patch 0.
    const auto m = rasterize_bbox(BBox{0, 0, 14, 14}, 336, 336, 24);
    CHECK(m.count() == 1);
    CHECK(m.at(0, 0));
  }
  SUBCASE("matches a pixel-overlap oracle on random boxes") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      const int w = 20 + static_cast<int>(rng() % 200), h = 20 + static_cast<int>(rng() % 200);
      const int n = 1 + static_cast<int>(rng() % 12);
      const double x0 = static_cast<double>(rng() % (w - 1)), y0 = static_cast<double>(rng() % (h - 1));
      const double x1 = x0 + 1 + static_cast<double>(rng() % static_cast<std::uint64_t>(w - x0));
      const double y1 = y0 + 1 + static_cast<double>(rng() % static_cast<std::uint64_t>(h - y0));
      const auto m = rasterize_bbox(BBox{x0, y0, std::min<double>(x1, w), std::min<double>(y1, h)}, w, h, n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          const double px0 = j * double(w) / n, px1 = (j + 1) * double(w) / n;
          const double py0 = i * double(h) / n, py1 = (i + 1) * double(h) / n;
          const double ox = std::min(px1, std::min<double>(x1, w)) - std::max(px0, x0);
          const double oy = std::min(py1, std::min<double>(y1, h)) - std::max(py0, y0);
          CHECK(m.at(i, j) == (ox > 1e-9 && oy > 1e-9));
        }
      }
    }
  }
}
