#include "hflow/bases.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <string>
#include <utility>

#include <Eigen/Householder>
#include <Eigen/QR>

#include "hflow/error.hpp"

namespace hflow {

namespace {

constexpr double kMinDiagonal = 1e-9;

void check_grid(int width, int height, int min_extent) {
  if (width < min_extent || height < min_extent) {
    fail(ErrorCode::kInvalidArgument, "basis grid must be at least " +
                                          std::to_string(min_extent) + "x" +
                                          std::to_string(min_extent) + ", got " +
                                          std::to_string(width) + "x" + std::to_string(height));
  }
}

// Normalized coordinate of column j; identical arithmetic is used by every
// routine that evaluates the tangent fields so grid values agree bit-for-bit.
double normalized(double centered, int extent) { return centered / center_offset(extent); }

void check_dims(const BasisSet& b, const FlowField& f) {
  if (f.width() != b.width() || f.height() != b.height()) {
    fail(ErrorCode::kDimensionMismatch, "flow is " + std::to_string(f.width()) + "x" +
                                            std::to_string(f.height()) + ", basis is " +
                                            std::to_string(b.width()) + "x" +
                                            std::to_string(b.height()));
  }
}

}  // namespace

BasisRows tangent_values(double u, double v) {
  BasisRows t;
  t << u, v, 1.0, 0.0, 0.0, 0.0, -u * u, -u * v,  //
      0.0, 0.0, 0.0, u, v, 1.0, -u * v, -v * v;
  return t;
}

std::vector<FlowField> tangent_fields(int width, int height) {
  check_grid(width, height, 2);
  const std::size_t n = static_cast<std::size_t>(width) * height;
  std::vector<std::vector<double>> planes(kNumBases, std::vector<double>(2 * n));
  for (int i = 0; i < height; ++i) {
    const double v = normalized(centered_y(i, height), height);
    for (int j = 0; j < width; ++j) {
      const double u = normalized(centered_x(j, width), width);
      const BasisRows t = tangent_values(u, v);
      const std::size_t k = static_cast<std::size_t>(i) * width + j;
      for (int c = 0; c < kNumBases; ++c) {
        planes[c][k] = t(0, c);
        planes[c][n + k] = t(1, c);
      }
    }
  }
  std::vector<FlowField> fields;
  fields.reserve(kNumBases);
  for (auto& p : planes) fields.emplace_back(width, height, std::move(p));
  return fields;
}

std::vector<FlowField> finite_difference_fields(int width, int height, double eps) {
  check_grid(width, height, 2);
  if (!(eps > 0.0 && eps <= 0.1)) {
    fail(ErrorCode::kInvalidArgument, "finite-difference eps must lie in (0, 0.1]");
  }
  const std::size_t n = static_cast<std::size_t>(width) * height;
  std::vector<FlowField> fields;
  fields.reserve(kNumBases);
  for (int c = 0; c < kNumBases; ++c) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(c / 3, c % 3) += eps;
    const Homography h(m);
    std::vector<double> plane(2 * n);
    for (int i = 0; i < height; ++i) {
      const double v = normalized(centered_y(i, height), height);
      for (int j = 0; j < width; ++j) {
        const double u = normalized(centered_x(j, width), width);
        const Point2 q = apply(h, {u, v});
        const std::size_t k = static_cast<std::size_t>(i) * width + j;
        plane[k] = (q.x - u) / eps;
        plane[n + k] = (q.y - v) / eps;
      }
    }
    fields.emplace_back(width, height, std::move(plane));
  }
  return fields;
}

BasisSet build(int width, int height) {
  check_grid(width, height, 3);
  const auto fields = tangent_fields(width, height);
  const std::size_t n = static_cast<std::size_t>(width) * height;
  const auto rows = static_cast<Eigen::Index>(2 * n);

  BasisSet b;
  b.width_ = width;
  b.height_ = height;

  Eigen::MatrixXd m(rows, kNumBases);
  for (int c = 0; c < kNumBases; ++c) {
    const auto dx = fields[c].dx_plane();
    const auto dy = fields[c].dy_plane();
    double peak = 0.0;
    for (std::size_t k = 0; k < n; ++k) peak = std::max(peak, std::hypot(dx[k], dy[k]));
    b.norms_[c] = peak;
    const auto data = fields[c].data();
    for (Eigen::Index k = 0; k < rows; ++k) m(k, c) = data[k] / peak;
  }

  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  b.r_ = qr.matrixQR().topRows(kNumBases).triangularView<Eigen::Upper>();
  b.q_ = qr.householderQ() * Eigen::MatrixXd::Identity(rows, kNumBases);
  for (int c = 0; c < kNumBases; ++c) {
    if (b.r_(c, c) < 0.0) {
      b.r_.row(c) *= -1.0;
      b.q_.col(c) *= -1.0;
    }
    if (!(std::abs(b.r_(c, c)) >= kMinDiagonal)) {
      fail(ErrorCode::kRankDeficient, "tangent field " + std::to_string(c + 1) +
                                          " is linearly dependent on the others");
    }
  }
  b.r_inv_ = b.r_.triangularView<Eigen::Upper>().solve(
      Eigen::Matrix<double, kNumBases, kNumBases>::Identity());
  return b;
}

std::shared_ptr<const BasisSet> shared_basis(int width, int height) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::shared_ptr<const BasisSet>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[{width, height}];
  if (!slot) slot = std::make_shared<const BasisSet>(build(width, height));
  return slot;
}

FlowField synthesize(const BasisSet& b, const BasisWeights& w) {
  const Eigen::VectorXd v = b.q() * to_vector(w);
  const std::size_t n = b.pixel_count();
  std::vector<double> data(2 * n);
  const double sx = b.scale_x(), sy = b.scale_y();
  for (std::size_t k = 0; k < n; ++k) {
    data[k] = v(static_cast<Eigen::Index>(k)) * sx;
    data[n + k] = v(static_cast<Eigen::Index>(n + k)) * sy;
  }
  return FlowField(b.width(), b.height(), std::move(data));
}

Projection analyze(const BasisSet& b, const FlowField& f) {
  check_dims(b, f);
  const std::size_t n = b.pixel_count();
  Eigen::VectorXd v(static_cast<Eigen::Index>(2 * n));
  const double sx = b.scale_x(), sy = b.scale_y();
  const auto dx = f.dx_plane();
  const auto dy = f.dy_plane();
  for (std::size_t k = 0; k < n; ++k) {
    v(static_cast<Eigen::Index>(k)) = dx[k] / sx;
    v(static_cast<Eigen::Index>(n + k)) = dy[k] / sy;
  }
  const BasisVector alpha = b.q().transpose() * v;
  const double rnorm = (v - b.q() * alpha).norm();
  Projection p;
  p.weights = from_vector(alpha);
  p.residual_norm = rnorm;
  p.residual = rnorm / std::max(v.norm(), 1e-12);
  return p;
}

std::vector<BasisRows> evaluate_at(const BasisSet& b, std::span<const Point2> points) {
  Eigen::Matrix<double, kNumBases, kNumBases> scaled = b.r_inverse();
  for (int j = 0; j < kNumBases; ++j) scaled.row(j) /= b.norms()[j];
  std::vector<BasisRows> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const double u = normalized(p.x, b.width());
    const double v = normalized(p.y, b.height());
    out.push_back(tangent_values(u, v) * scaled);
  }
  return out;
}

BasisRows pixel_jacobian(const BasisSet& b, Point2 p) {
  BasisRows rows = evaluate_at(b, std::span<const Point2>(&p, 1)).front();
  rows.row(0) *= b.scale_x();
  rows.row(1) *= b.scale_y();
  return rows;
}

}  // namespace hflow
