#include "hflow/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "hflow/error.hpp"

namespace hflow {

namespace {

constexpr double kMinDeterminant = 1e-12;
constexpr double kMinDenominator = 1e-9;
constexpr double kDegenerateGap = 1e-9;

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void check_dims(int width, int height, const char* what) {
  if (width <= 0 || height <= 0) {
    fail(ErrorCode::kInvalidArgument,
         std::string(what) + " dimensions must be positive, got " + std::to_string(width) +
             "x" + std::to_string(height));
  }
}

// Similarity taking the points to zero centroid and mean distance sqrt(2).
Eigen::Matrix3d isotropic_normalizer(std::span<const Point2> pts) {
  double cx = 0.0, cy = 0.0;
  for (const auto& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(pts.size());
  cy /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += std::hypot(p.x - cx, p.y - cy);
  mean_dist /= static_cast<double>(pts.size());
  if (!(mean_dist > 0.0)) {
    fail(ErrorCode::kDegenerateConfiguration, "all points coincide");
  }
  const double s = std::sqrt(2.0) / mean_dist;
  Eigen::Matrix3d t;
  t << s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0;
  return t;
}

Point2 transform_affine(const Eigen::Matrix3d& t, Point2 p) {
  return {t(0, 0) * p.x + t(0, 1) * p.y + t(0, 2), t(1, 0) * p.x + t(1, 1) * p.y + t(1, 2)};
}

}  // namespace

Homography::Homography() : m_(Eigen::Matrix3d::Identity()) {}

Homography::Homography(const Eigen::Matrix3d& m) {
  if (!m.allFinite()) fail(ErrorCode::kSingularHomography, "matrix has non-finite entries");
  const double scale = m.cwiseAbs().maxCoeff();
  if (!(std::abs(m(2, 2)) > 1e-12 * scale)) {
    fail(ErrorCode::kDegenerateProjection, "entry (3,3) is zero; cannot normalize");
  }
  m_ = m / m(2, 2);
  m_(2, 2) = 1.0;
  if (!(std::abs(m_.determinant()) >= kMinDeterminant)) {
    fail(ErrorCode::kSingularHomography, "determinant below 1e-12");
  }
}

Homography Homography::translation(double tx, double ty) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 2) = tx;
  m(1, 2) = ty;
  return Homography(m);
}

Point2 apply(const Homography& h, Point2 p) {
  const auto& m = h.matrix();
  const double w = m(2, 0) * p.x + m(2, 1) * p.y + 1.0;
  if (!(std::abs(w) > kMinDenominator)) {
    fail(ErrorCode::kDegenerateProjection, "point maps to the line at infinity");
  }
  return {(m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2)) / w,
          (m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2)) / w};
}

Homography dlt(std::span<const PointPair> correspondences) {
  const std::size_t n = correspondences.size();
  if (n < 4) {
    fail(ErrorCode::kDegenerateConfiguration,
         "dlt needs at least 4 correspondences, got " + std::to_string(n));
  }
  std::vector<Point2> src(n), dst(n);
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = correspondences[i].src;
    dst[i] = correspondences[i].dst;
  }
  const Eigen::Matrix3d t_src = isotropic_normalizer(src);
  const Eigen::Matrix3d t_dst = isotropic_normalizer(dst);

  // Padded to at least 9 rows so the SVD exposes the full 9-dim right space.
  const Eigen::Index rows = std::max<Eigen::Index>(9, static_cast<Eigen::Index>(2 * n));
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 p = transform_affine(t_src, src[i]);
    const Point2 q = transform_affine(t_dst, dst[i]);
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << 0.0, 0.0, 0.0, -p.x, -p.y, -1.0, q.y * p.x, q.y * p.y, q.y;
    a.row(r + 1) << p.x, p.y, 1.0, 0.0, 0.0, 0.0, -q.x * p.x, -q.x * p.y, -q.x;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(7) - sv(8) <= kDegenerateGap * sv(0)) {
    fail(ErrorCode::kDegenerateConfiguration,
         "design matrix null space is not one-dimensional (collinear points?)");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return Homography(t_dst.inverse() * hn * t_src);
}

Homography invert(const Homography& h) { return Homography(h.matrix().inverse()); }

Homography compose(const Homography& first, const Homography& second) {
  return Homography(second.matrix() * first.matrix());
}

FlowField::FlowField(int width, int height) : width_(width), height_(height) {
  check_dims(width, height, "flow");
  data_.assign(2 * pixel_count(), 0.0);
}

FlowField::FlowField(int width, int height, std::vector<double> planar)
    : width_(width), height_(height), data_(std::move(planar)) {
  check_dims(width, height, "flow");
  if (data_.size() != 2 * pixel_count()) {
    fail(ErrorCode::kDimensionMismatch, "flow data length does not match 2*W*H");
  }
  if (!all_finite(data_)) fail(ErrorCode::kInvalidArgument, "flow has non-finite values");
}

FlowField FlowField::negated() const {
  std::vector<double> out(data_.size());
  std::transform(data_.begin(), data_.end(), out.begin(), [](double v) { return -v; });
  return FlowField(width_, height_, std::move(out));
}

GrayImage::GrayImage(int width, int height) : width_(width), height_(height) {
  check_dims(width, height, "image");
  pixels_.assign(static_cast<std::size_t>(width) * height, 0.0);
}

GrayImage::GrayImage(int width, int height, std::vector<double> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  check_dims(width, height, "image");
  if (pixels_.size() != static_cast<std::size_t>(width) * height) {
    fail(ErrorCode::kDimensionMismatch, "image data length does not match W*H");
  }
  for (double v : pixels_) {
    if (!(v >= 0.0 && v <= 1.0)) {
      fail(ErrorCode::kInvalidArgument, "image intensities must lie in [0, 1]");
    }
  }
}

ValidityMask::ValidityMask(int width, int height, std::vector<std::uint8_t> mask)
    : width_(width), height_(height), mask_(std::move(mask)) {
  check_dims(width, height, "mask");
  if (mask_.size() != static_cast<std::size_t>(width) * height) {
    fail(ErrorCode::kDimensionMismatch, "mask length does not match W*H");
  }
}

std::size_t ValidityMask::valid_count() const {
  return static_cast<std::size_t>(std::count_if(mask_.begin(), mask_.end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

double ValidityMask::valid_fraction() const {
  return static_cast<double>(valid_count()) / static_cast<double>(mask_.size());
}

FlowField homography_to_flow(const Homography& h, int width, int height) {
  check_dims(width, height, "flow");
  const std::size_t n = static_cast<std::size_t>(width) * height;
  std::vector<double> data(2 * n);
  for (int i = 0; i < height; ++i) {
    const double y = centered_y(i, height);
    for (int j = 0; j < width; ++j) {
      const double x = centered_x(j, width);
      const Point2 q = apply(h, {x, y});
      const std::size_t k = static_cast<std::size_t>(i) * width + j;
      data[k] = q.x - x;
      data[n + k] = q.y - y;
    }
  }
  return FlowField(width, height, std::move(data));
}

Homography flow_to_homography(const FlowField& f) {
  constexpr int kSamples = 9;
  std::vector<PointPair> pairs;
  pairs.reserve(kSamples * kSamples);
  for (int a = 0; a < kSamples; ++a) {
    const int i = static_cast<int>(std::lround(a * (f.height() - 1) / double(kSamples - 1)));
    for (int b = 0; b < kSamples; ++b) {
      const int j = static_cast<int>(std::lround(b * (f.width() - 1) / double(kSamples - 1)));
      const Point2 p{centered_x(j, f.width()), centered_y(i, f.height())};
      pairs.push_back({p, {p.x + f.dx(i, j), p.y + f.dy(i, j)}});
    }
  }
  return dlt(pairs);
}

std::optional<BilinearTap> bilinear_tap(double sx, double sy, int width, int height) {
  if (!(sx >= 0.0 && sx <= width - 1 && sy >= 0.0 && sy <= height - 1)) return std::nullopt;
  BilinearTap t{};
  t.x0 = std::min(static_cast<int>(sx), std::max(width - 2, 0));
  t.y0 = std::min(static_cast<int>(sy), std::max(height - 2, 0));
  t.x1 = std::min(t.x0 + 1, width - 1);
  t.y1 = std::min(t.y0 + 1, height - 1);
  t.fx = sx - t.x0;
  t.fy = sy - t.y0;
  return t;
}

ValidityMask warp_mask(const FlowField& f) {
  const int w = f.width(), h = f.height();
  std::vector<std::uint8_t> mask(f.pixel_count(), 0);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      mask[static_cast<std::size_t>(i) * w + j] =
          bilinear_tap(j + f.dx(i, j), i + f.dy(i, j), w, h).has_value() ? 1 : 0;
    }
  }
  return ValidityMask(w, h, std::move(mask));
}

std::pair<GrayImage, ValidityMask> warp_image(const GrayImage& src, const FlowField& f) {
  if (src.width() != f.width() || src.height() != f.height()) {
    fail(ErrorCode::kDimensionMismatch, "warp_image: flow and image sizes differ");
  }
  const int w = src.width(), h = src.height();
  std::vector<double> out(src.pixel_count(), 0.0);
  std::vector<std::uint8_t> mask(src.pixel_count(), 0);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * w + j;
      if (auto tap = bilinear_tap(j + f.dx(i, j), i + f.dy(i, j), w, h)) {
        // Clamp guards the last ulp; bilinear weights are a partition of unity.
        out[k] = std::clamp(tap->sample(src.pixels(), w), 0.0, 1.0);
        mask[k] = 1;
      }
    }
  }
  return {GrayImage(w, h, std::move(out)), ValidityMask(w, h, std::move(mask))};
}

}  // namespace hflow
