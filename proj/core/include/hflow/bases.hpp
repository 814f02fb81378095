#pragma once

#include <array>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "hflow/geometry.hpp"

namespace hflow {

inline constexpr int kNumBases = 8;

/// Tag written next to exported bases and weights. Names the coordinate frame
/// (centered pixel grid, scaled to [-1, 1] per axis) and the flatten order.
inline constexpr std::string_view kBasisConvention = "centered-unit-square/dx-block-dy-block";

struct BasisWeights {
  std::array<double, kNumBases> alpha{};

  static BasisWeights zero() { return {}; }
  static BasisWeights unit(int k) {
    BasisWeights w;
    w.alpha.at(static_cast<std::size_t>(k)) = 1.0;
    return w;
  }

  friend bool operator==(const BasisWeights&, const BasisWeights&) = default;
};

using BasisVector = Eigen::Matrix<double, kNumBases, 1>;
using BasisRows = Eigen::Matrix<double, 2, kNumBases>;

inline BasisVector to_vector(const BasisWeights& w) {
  return Eigen::Map<const BasisVector>(w.alpha.data());
}
inline BasisWeights from_vector(const BasisVector& v) {
  BasisWeights w;
  Eigen::Map<BasisVector>(w.alpha.data()) = v;
  return w;
}

// The 8 orthonormal homography-flow bases for a width x height grid.
//
// Columns of q() are flattened flows in normalized units: the dx block (all
// pixels row-major) followed by the dy block. A pixel's normalized coordinates
// are u = x / ((W-1)/2), v = y / ((H-1)/2), and normalized displacements use
// the same per-axis scaling. M = Q R with diag(R) > 0, where column j of M is
// the tangent field of homography entry j divided by its largest magnitude.
class BasisSet {
 public:
  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  /// Pixels per normalized unit along x and y.
  double scale_x() const { return center_offset(width_); }
  double scale_y() const { return center_offset(height_); }

  const Eigen::MatrixXd& q() const { return q_; }
  const Eigen::Matrix<double, kNumBases, kNumBases>& r() const { return r_; }
  const Eigen::Matrix<double, kNumBases, kNumBases>& r_inverse() const { return r_inv_; }
  const std::array<double, kNumBases>& norms() const { return norms_; }
  std::string_view convention() const { return kBasisConvention; }

 private:
  friend BasisSet build(int width, int height);
  BasisSet() = default;

  int width_ = 0;
  int height_ = 0;
  Eigen::MatrixXd q_;
  Eigen::Matrix<double, kNumBases, kNumBases> r_;
  Eigen::Matrix<double, kNumBases, kNumBases> r_inv_;
  std::array<double, kNumBases> norms_{};
};

/// Normalized-unit tangent value of each homography entry at (u, v), in entry
/// order (1,1) (1,2) (1,3) (2,1) (2,2) (2,3) (3,1) (3,2).
BasisRows tangent_values(double u, double v);

/// Derivatives of the homography flow w.r.t. each matrix entry at the identity,
/// sampled on the grid (normalized units).
std::vector<FlowField> tangent_fields(int width, int height);

/// Finite-perturbation fields: flow of (identity + eps at entry k), divided by
/// eps, in normalized units. Requires eps in (0, 0.1].
std::vector<FlowField> finite_difference_fields(int width, int height, double eps);

BasisSet build(int width, int height);

/// Process-wide cache of built basis sets keyed by grid size.
std::shared_ptr<const BasisSet> shared_basis(int width, int height);

/// Dense pixel-unit flow for the given weights.
FlowField synthesize(const BasisSet& b, const BasisWeights& w);

struct Projection {
  BasisWeights weights;
  double residual = 0.0;       // ||v - Q Q^T v|| / max(||v||, 1e-12), normalized units
  double residual_norm = 0.0;  // ||v - Q Q^T v||, normalized units
};

Projection analyze(const BasisSet& b, const FlowField& f);

/// Basis values (normalized units, 2 x 8 per point) at arbitrary centered pixel
/// coordinates. Agrees with the rows of q() at pixel centers.
std::vector<BasisRows> evaluate_at(const BasisSet& b, std::span<const Point2> points);

/// Pixel-unit Jacobian of the flow w.r.t. the weights at one point.
BasisRows pixel_jacobian(const BasisSet& b, Point2 p);

}  // namespace hflow
