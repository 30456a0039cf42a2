#pragma once

// Generators and comparison helpers shared by the unit and acceptance suites.

#include <array>
#include <cmath>
#include <random>

#include "trapeval/bbox.hpp"
#include "trapeval/losses.hpp"

namespace trapeval::testing {

inline BoundingBox random_box(std::mt19937_64& rng, double extent = 10.0) {
  std::uniform_real_distribution<double> pos(0.0, extent);
  std::uniform_real_distribution<double> size(0.2, 0.6 * extent);
  const double x = pos(rng);
  const double y = pos(rng);
  return {x, y, x + size(rng), y + size(rng)};
}

/// Pairs cycle through independent, overlapping, contained and disjoint
/// configurations.
inline std::pair<BoundingBox, BoundingBox> random_pair(std::mt19937_64& rng, int index) {
  std::uniform_real_distribution<double> jitter(-0.8, 0.8);
  std::uniform_real_distribution<double> frac(0.1, 0.4);
  const BoundingBox gt = random_box(rng);
  switch (index % 4) {
    case 0: return {random_box(rng), gt};
    case 1:
      return {BoundingBox{gt.x1 + jitter(rng), gt.y1 + jitter(rng), gt.x2 + jitter(rng),
                          gt.y2 + jitter(rng)}
                  .normalized(),
              gt};
    case 2: {
      const double w = gt.width();
      const double h = gt.height();
      return {BoundingBox{gt.x1 + frac(rng) * w, gt.y1 + frac(rng) * h, gt.x2 - frac(rng) * w,
                          gt.y2 - frac(rng) * h},
              gt};
    }
    default: {
      const BoundingBox p = random_box(rng);
      const double shift = gt.x2 - p.x1 + 0.5 + frac(rng);
      return {BoundingBox{p.x1 + shift, p.y1, p.x2 + shift, p.y2}, gt};
    }
  }
}

/// Disjoint pair: the prediction lies strictly right of or below the target.
inline std::pair<BoundingBox, BoundingBox> random_disjoint_pair(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> gap(0.1, 3.0);
  std::uniform_int_distribution<int> side(0, 1);
  const BoundingBox gt = random_box(rng);
  BoundingBox p = random_box(rng);
  if (side(rng) == 0) {
    const double shift = gt.x2 - p.x1 + gap(rng);
    p = {p.x1 + shift, p.y1, p.x2 + shift, p.y2};
  } else {
    const double shift = gt.y2 - p.y1 + gap(rng);
    p = {p.x1, p.y1 + shift, p.x2, p.y2 + shift};
  }
  return {p, gt};
}

/// True when some predicted edge lies within `margin` of a target edge on the
/// same axis, i.e. the pair sits near a non-differentiable configuration.
inline bool near_kink(const BoundingBox& p, const BoundingBox& g, double margin) {
  const std::array<double, 2> px{p.x1, p.x2}, gx{g.x1, g.x2}, py{p.y1, p.y2}, gy{g.y1, g.y2};
  for (double a : px)
    for (double b : gx)
      if (std::abs(a - b) < margin) return true;
  for (double a : py)
    for (double b : gy)
      if (std::abs(a - b) < margin) return true;
  return false;
}

/// Component-wise acceptance rule for analytic vs. numeric gradients.
inline bool gradients_agree(const losses::Grad4& analytic, const losses::Grad4& numeric,
                            double rel_tol = 1e-4, double abs_tol = 1e-7) {
  for (std::size_t i = 0; i < 4; ++i) {
    const double err = std::abs(analytic[i] - numeric[i]);
    if (std::abs(analytic[i]) > 1e-8) {
      if (err / std::abs(analytic[i]) >= rel_tol) return false;
    } else if (err >= abs_tol) {
      return false;
    }
  }
  return true;
}

inline double norm(const losses::Grad4& g) {
  return std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + g[3] * g[3]);
}

}  // namespace trapeval::testing
