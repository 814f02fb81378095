#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace hflow {

// Pixel coordinates are centered: for column j and row i of a W x H grid,
// x = j - (W - 1) / 2 and y = i - (H - 1) / 2.
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

struct PointPair {
  Point2 src;
  Point2 dst;
};

inline double center_offset(int extent) { return 0.5 * (extent - 1); }
inline double centered_x(int col, int width) { return col - center_offset(width); }
inline double centered_y(int row, int height) { return row - center_offset(height); }

// 3x3 projective map normalized so that entry (2, 2) == 1. Construction rejects
// matrices that cannot be normalized or whose determinant is below 1e-12.
class Homography {
 public:
  Homography();
  explicit Homography(const Eigen::Matrix3d& m);

  static Homography identity() { return Homography(); }
  static Homography translation(double tx, double ty);

  const Eigen::Matrix3d& matrix() const { return m_; }
  double operator()(int row, int col) const { return m_(row, col); }

  friend bool operator==(const Homography& a, const Homography& b) { return a.m_ == b.m_; }

 private:
  Eigen::Matrix3d m_;
};

/// Projective application with homogeneous division. Throws DegenerateProjection
/// when the point lies within 1e-9 of the line at infinity.
Point2 apply(const Homography& h, Point2 p);

/// Normalized DLT over >= 4 correspondences (Hartley isotropic scaling on both
/// sides). Throws DegenerateConfiguration when the null space is not 1-D.
Homography dlt(std::span<const PointPair> correspondences);

Homography invert(const Homography& h);

/// Returns the map that applies `first`, then `second`.
Homography compose(const Homography& first, const Homography& second);

/// Dense displacement grid, stored planar: all dx values row-major, then all dy
/// values row-major. Values are in pixels.
class FlowField {
 public:
  FlowField(int width, int height);
  FlowField(int width, int height, std::vector<double> planar);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  double dx(int row, int col) const { return data_[index(row, col)]; }
  double dy(int row, int col) const { return data_[pixel_count() + index(row, col)]; }

  std::span<const double> data() const { return data_; }
  std::span<const double> dx_plane() const { return {data_.data(), pixel_count()}; }
  std::span<const double> dy_plane() const {
    return {data_.data() + pixel_count(), pixel_count()};
  }

  FlowField negated() const;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * width_ + col;
  }

  int width_;
  int height_;
  std::vector<double> data_;
};

/// Row-major grayscale image with intensities in [0, 1].
class GrayImage {
 public:
  GrayImage(int width, int height);
  GrayImage(int width, int height, std::vector<double> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return pixels_.size(); }

  double at(int row, int col) const {
    return pixels_[static_cast<std::size_t>(row) * width_ + col];
  }
  std::span<const double> pixels() const { return pixels_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  int width_;
  int height_;
  std::vector<double> pixels_;
};

class ValidityMask {
 public:
  ValidityMask(int width, int height, std::vector<std::uint8_t> mask);

  int width() const { return width_; }
  int height() const { return height_; }
  bool valid(int row, int col) const {
    return mask_[static_cast<std::size_t>(row) * width_ + col] != 0;
  }
  std::span<const std::uint8_t> values() const { return mask_; }
  std::size_t valid_count() const;
  double valid_fraction() const;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> mask_;
};

/// Flow at every pixel center p: apply(h, p) - p.
FlowField homography_to_flow(const Homography& h, int width, int height);

/// Runs dlt on a 9x9 uniform sub-grid of (p, p + flow(p)) pairs. Exact when
/// the flow was produced by homography_to_flow.
Homography flow_to_homography(const FlowField& f);

// Bilinear footprint of a sample at pixel-index coordinates (sx = column,
// sy = row). A sample is valid iff it lies in [0, W-1] x [0, H-1]; taps with
// zero weight at the far border are clamped so integer positions reproduce
// the source exactly.
struct BilinearTap {
  int x0, y0, x1, y1;
  double fx, fy;

  double sample(std::span<const double> plane, int width, std::size_t stride = 1,
                std::size_t offset = 0) const {
    auto at = [&](int y, int x) {
      return plane[(static_cast<std::size_t>(y) * width + x) * stride + offset];
    };
    const double top = lerp(at(y0, x0), at(y0, x1), fx);
    const double bottom = lerp(at(y1, x0), at(y1, x1), fx);
    return lerp(top, bottom, fy);
  }

  // Starts from the nearer endpoint, so t = 0, t = 1 and a == b are all exact.
  static double lerp(double a, double b, double t) {
    return t < 0.5 ? a + t * (b - a) : b + (1.0 - t) * (a - b);
  }
};

std::optional<BilinearTap> bilinear_tap(double sx, double sy, int width, int height);

/// Backward warp: out(p) = bilinear(src, p + f(p)); zero where the mask is false.
std::pair<GrayImage, ValidityMask> warp_image(const GrayImage& src, const FlowField& f);

/// Validity mask of a backward warp by f over a width x height source.
ValidityMask warp_mask(const FlowField& f);

}  // namespace hflow
