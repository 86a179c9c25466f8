#include "vgkit/grounding_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "vgkit/errors.hpp"

namespace vgkit {

PatchMask::PatchMask(int n) : n_(n) {
  if (n < 1) throw InvariantError("mask grid side must be >= 1");
  cells_.assign(static_cast<std::size_t>(n) * n, 0);
}

PatchMask::PatchMask(int n, std::vector<std::uint8_t> cells) : n_(n), cells_(std::move(cells)) {
  if (n < 1) throw InvariantError("mask grid side must be >= 1");
  if (cells_.size() != static_cast<std::size_t>(n) * n) {
    throw InvariantError("mask has " + std::to_string(cells_.size()) + " cells, expected " +
                         std::to_string(n * n));
  }
  if (std::any_of(cells_.begin(), cells_.end(), [](std::uint8_t c) { return c > 1; })) {
    throw InvariantError("mask cells must be 0 or 1");
  }
}

PatchMask PatchMask::full(int n) {
  PatchMask m(n);
  std::fill(m.cells_.begin(), m.cells_.end(), std::uint8_t{1});
  return m;
}

std::size_t PatchMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

AttentionMap::AttentionMap(int n, std::vector<double> cells) : n_(n), cells_(std::move(cells)) {
  if (n < 1) throw InvariantError("attention grid side must be >= 1");
  if (cells_.size() != static_cast<std::size_t>(n) * n) {
    throw InvariantError("attention map has " + std::to_string(cells_.size()) +
                         " cells, expected " + std::to_string(n * n));
  }
  for (const double v : cells_) {
    if (!std::isfinite(v) || v < 0) throw InvariantError("attention cells must be finite and >= 0");
  }
}

AttentionMap AttentionMap::uniform(int n, double value) {
  return AttentionMap(n, std::vector<double>(static_cast<std::size_t>(n) * n, value));
}

AttentionMap AttentionMap::from_floats(int n, std::span<const float> cells) {
  return AttentionMap(n, std::vector<double>(cells.begin(), cells.end()));
}

double AttentionMap::mass() const noexcept {
  return std::accumulate(cells_.begin(), cells_.end(), 0.0);
}

AttentionMap AttentionMap::normalized() const {
  const double total = mass();
  if (!(total > 0)) throw DegenerateInput("attention map has zero mass");
  std::vector<double> out(cells_.size());
  std::transform(cells_.begin(), cells_.end(), out.begin(), [total](double v) { return v / total; });
  return AttentionMap(n_, std::move(out));
}

// --- rasterization -----------------------------------------------------------

PatchMask rasterize_bbox(const BBox& bbox, int image_width, int image_height, int grid_n) {
  if (grid_n < 1 || image_width < 1 || image_height < 1) {
    throw InvariantError("rasterization needs a positive grid and image size");
  }
  PatchMask mask(grid_n);
  const double n = grid_n;
  // Patch j spans [j*W/N, (j+1)*W/N); compare in the scaled domain (x*N vs j*W)
  // so integer boxes never round.
  for (int i = 0; i < grid_n; ++i) {
    const bool row_hit = bbox.y_min * n < (i + 1.0) * image_height && i * double(image_height) < bbox.y_max * n;
    if (!row_hit) continue;
    for (int j = 0; j < grid_n; ++j) {
      const bool col_hit = bbox.x_min * n < (j + 1.0) * image_width && j * double(image_width) < bbox.x_max * n;
      if (col_hit) mask.set(i, j, true);
    }
  }
  if (mask.count() == 0) {
    throw DegenerateMask("bbox overlaps no patch of the " + std::to_string(grid_n) + "x" +
                         std::to_string(grid_n) + " grid");
  }
  return mask;
}

PatchMask rasterize_bbox(const SampleMeta& meta) {
  try {
    meta.validate();
    return rasterize_bbox(meta.bbox, meta.image_width, meta.image_height, meta.grid_n);
  } catch (Error& e) {
    e.attach_sample(meta.sample_id);
    throw;
  }
}

// --- metrics -----------------------------------------------------------------

namespace {

void check_pair(const PatchMask& mask, const AttentionMap& attention) {
  if (mask.n() != attention.n()) {
    throw ShapeError("mask grid " + std::to_string(mask.n()) + " vs attention grid " +
                     std::to_string(attention.n()));
  }
  if (mask.count() == 0) throw DegenerateInput("mask has no active cell");
  if (!(attention.mass() > 0)) throw DegenerateInput("attention map has zero mass");
}

void check_eps(double eps) {
  if (!(eps > 0) || !std::isfinite(eps)) throw DegenerateInput("epsilon must be positive");
}

}  // namespace

std::vector<double> normalized_mask(const PatchMask& mask) {
  const double total = static_cast<double>(mask.count());
  if (total == 0) throw DegenerateInput("mask has no active cell");
  std::vector<double> out(mask.size());
  const auto cells = mask.cells();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cells[i] / total;
  return out;
}

std::vector<double> smoothed_attention(const AttentionMap& attention, double eps) {
  check_eps(eps);
  const auto cells = attention.cells();
  const double mass = attention.mass();
  if (!(mass > 0)) throw DegenerateInput("attention map has zero mass");
  // eps is added to the unit-mass map so that rescaling A leaves A^ unchanged.
  std::vector<double> out(cells.size());
  double total = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = cells[i] / mass + eps;
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

double attention_ratio(const AttentionMap& attention, const PatchMask& mask) {
  check_pair(mask, attention);
  const auto a = attention.cells();
  const auto m = mask.cells();
  double inside = 0;
  double total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    total += a[i];
    if (m[i]) inside += a[i];
  }
  const double mean = total / static_cast<double>(a.size());
  return inside / (mean * static_cast<double>(mask.count()));
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("distributions differ in length");
  double d = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) d += p[i] * std::log(p[i] / q[i]);
  }
  // Rounding can leave a tiny negative total when p == q.
  return std::max(d, 0.0);
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("distributions differ in length");
  double left = 0;
  double right = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double r = 0.5 * (p[i] + q[i]);
    if (p[i] > 0) left += p[i] * std::log(p[i] / r);
    if (q[i] > 0) right += q[i] * std::log(q[i] / r);
  }
  return std::clamp(0.5 * left + 0.5 * right, 0.0, std::log(2.0));
}

double kl_divergence(const PatchMask& mask, const AttentionMap& attention, double eps) {
  check_pair(mask, attention);
  return kl_divergence(normalized_mask(mask), smoothed_attention(attention, eps));
}

double js_divergence(const PatchMask& mask, const AttentionMap& attention, double eps) {
  check_pair(mask, attention);
  return js_divergence(normalized_mask(mask), smoothed_attention(attention, eps));
}

GroundingScores score(const AttentionMap& attention, const PatchMask& mask, double eps) {
  check_pair(mask, attention);
  const auto m = normalized_mask(mask);
  const auto a = smoothed_attention(attention, eps);
  return GroundingScores{attention_ratio(attention, mask), kl_divergence(m, a), js_divergence(m, a), eps};
}

}  // namespace vgkit
