#pragma once

// Alignment between an attention map over the N*N patch grid and a binary
// ground-truth region mask: attention ratio (AR), KL divergence and
// Jensen-Shannon divergence. All arithmetic is done in double; logs are
// natural, so JS is bounded by ln 2.

#include <cstdint>
#include <span>
#include <vector>

#include "vgkit/tensor_io.hpp"

namespace vgkit {

inline constexpr double kDefaultEpsilon = 1e-8;

// N x N binary mask, row-major (cell (i, j) at i * N + j).
class PatchMask {
 public:
  PatchMask() = default;
  explicit PatchMask(int n);
  // Throws InvariantError unless every cell is 0 or 1 and size is n*n.
  PatchMask(int n, std::vector<std::uint8_t> cells);

  static PatchMask full(int n);

  int n() const noexcept { return n_; }
  std::size_t size() const noexcept { return cells_.size(); }
  bool at(int i, int j) const { return cells_[static_cast<std::size_t>(i) * n_ + j] != 0; }
  void set(int i, int j, bool on) { cells_[static_cast<std::size_t>(i) * n_ + j] = on ? 1 : 0; }
  std::span<const std::uint8_t> cells() const noexcept { return cells_; }
  // ||M||_1
  std::size_t count() const noexcept;

  friend bool operator==(const PatchMask&, const PatchMask&) = default;

 private:
  int n_ = 0;
  std::vector<std::uint8_t> cells_;
};

// N x N non-negative attention map, row-major.
class AttentionMap {
 public:
  AttentionMap() = default;
  // Throws InvariantError on size mismatch or negative/non-finite cells.
  AttentionMap(int n, std::vector<double> cells);

  static AttentionMap uniform(int n, double value = 1.0);
  static AttentionMap from_floats(int n, std::span<const float> cells);

  int n() const noexcept { return n_; }
  std::size_t size() const noexcept { return cells_.size(); }
  double at(int i, int j) const { return cells_[static_cast<std::size_t>(i) * n_ + j]; }
  std::span<const double> cells() const noexcept { return cells_; }
  // ||A||_1
  double mass() const noexcept;
  // A / ||A||_1; DegenerateInput when the mass is zero.
  AttentionMap normalized() const;

 private:
  int n_ = 0;
  std::vector<double> cells_;
};

struct GroundingScores {
  double ar = 0;
  double kl = 0;
  double js = 0;
  double epsilon_used = 0;
};

// Cell (i, j) is active iff the patch's pixel rectangle
// [j*W/N, (j+1)*W/N) x [i*H/N, (i+1)*H/N) overlaps the bbox with positive area.
PatchMask rasterize_bbox(const SampleMeta& meta);
PatchMask rasterize_bbox(const BBox& bbox, int image_width, int image_height, int grid_n);

// sum(A . M) / ((||A||_1 / N^2) * ||M||_1)
double attention_ratio(const AttentionMap& attention, const PatchMask& mask);

// D_KL(M^ || A^) with M^ = M / ||M||_1 and A^ = (A~ + eps) / ||A~ + eps||_1,
// A~ = A / ||A||_1. Smoothing the unit-mass map keeps the result independent
// of A's scale.
double kl_divergence(const PatchMask& mask, const AttentionMap& attention,
                     double eps = kDefaultEpsilon);

// D_JS(M^ || A^) with the same smoothing of A as kl_divergence.
double js_divergence(const PatchMask& mask, const AttentionMap& attention,
                     double eps = kDefaultEpsilon);

// Divergences between two already-normalized distributions of equal length.
// Zero-probability terms of the first argument contribute nothing.
double kl_divergence(std::span<const double> p, std::span<const double> q);
double js_divergence(std::span<const double> p, std::span<const double> q);

GroundingScores score(const AttentionMap& attention, const PatchMask& mask,
                      double eps = kDefaultEpsilon);

// The two distributions the divergences compare; exposed for callers that
// report them (and for tests).
std::vector<double> normalized_mask(const PatchMask& mask);
std::vector<double> smoothed_attention(const AttentionMap& attention, double eps);

}  // namespace vgkit
