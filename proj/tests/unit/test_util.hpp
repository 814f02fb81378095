#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "hflow/geometry.hpp"
#include "hflow/rng.hpp"

namespace hflow::testing {

// Homography moving each image corner by an offset drawn uniformly from
// [-rho, rho]^2 (pixels).
inline Homography random_corner_homography(CounterRng& rng, int width, int height, double rho) {
  const double hx = center_offset(width), hy = center_offset(height);
  const std::array<Point2, 4> corners{{{-hx, -hy}, {hx, -hy}, {hx, hy}, {-hx, hy}}};
  std::array<PointPair, 4> pairs{};
  for (std::size_t c = 0; c < 4; ++c) {
    pairs[c] = {corners[c], {corners[c].x + rng.uniform(-rho, rho),
                             corners[c].y + rng.uniform(-rho, rho)}};
  }
  return dlt(pairs);
}

// Affine map with a modest random linear part and translation.
inline Homography random_affine(CounterRng& rng, double translation = 5.0) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) m(r, c) += rng.uniform(-0.1, 0.1);
    m(r, 2) = rng.uniform(-translation, translation);
  }
  return Homography(m);
}

// Plain homogeneous multiply-and-divide, independent of the library.
inline Point2 oracle_apply(const Eigen::Matrix3d& m, Point2 p) {
  const double a[3] = {p.x, p.y, 1.0};
  double out[3] = {0.0, 0.0, 0.0};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out[r] += m(r, c) * a[c];
  }
  return {out[0] / out[2], out[1] / out[2]};
}

inline GrayImage smooth_image(int width, int height, std::uint64_t seed) {
  CounterRng rng(seed, 1);
  const double fx1 = rng.uniform(0.05, 0.12), fy1 = rng.uniform(0.05, 0.12);
  const double fx2 = rng.uniform(0.02, 0.06), fy2 = rng.uniform(0.02, 0.06);
  const double p1 = rng.uniform(0, 6.28), p2 = rng.uniform(0, 6.28);
  std::vector<double> px(static_cast<std::size_t>(width) * height);
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      px[static_cast<std::size_t>(i) * width + j] =
          0.5 + 0.25 * std::sin(fx1 * j + fy1 * i + p1) + 0.2 * std::cos(fx2 * j - fy2 * i + p2);
    }
  }
  return GrayImage(width, height, std::move(px));
}

inline GrayImage noise_image(int width, int height, std::uint64_t seed) {
  CounterRng rng(seed, 2);
  std::vector<double> px(static_cast<std::size_t>(width) * height);
  for (double& v : px) v = rng.uniform();
  return GrayImage(width, height, std::move(px));
}

inline double max_abs(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

}  // namespace hflow::testing
