#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace hflow {

inline constexpr int kDefaultProjectionRank = 16;

/// H x W x C feature tensor, row-major over pixels with channels innermost.
class FeatureMap {
 public:
  FeatureMap(int width, int height, int channels);
  FeatureMap(int width, int height, int channels, std::vector<double> data);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  double at(int row, int col, int channel) const {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + channel];
  }
  std::span<const double> data() const { return data_; }

  /// HW x C view: one column per channel.
  Eigen::MatrixXd as_matrix() const;
  static FeatureMap from_matrix(int width, int height, const Eigen::MatrixXd& m);

 private:
  int width_;
  int height_;
  int channels_;
  std::vector<double> data_;
};

/// HW x K set of (not necessarily orthogonal) feature bases.
class ProjectionBasis {
 public:
  ProjectionBasis(int width, int height, Eigen::MatrixXd v);

  int width() const { return width_; }
  int height() const { return height_; }
  int rank() const { return static_cast<int>(v_.cols()); }
  const Eigen::MatrixXd& v() const { return v_; }

  static ProjectionBasis canonical(int width, int height, int k);
  static ProjectionBasis random_gaussian(int width, int height, int k, std::uint64_t seed);
  static ProjectionBasis random_orthonormal(int width, int height, int k, std::uint64_t seed);
  /// Channels of a feature map become the basis columns.
  static ProjectionBasis from_feature_map(const FeatureMap& m);

 private:
  int width_;
  int height_;
  Eigen::MatrixXd v_;
};

/// Ridge added to V^T V when the caller does not pick one: 1e-8 * trace(V^T V) / K.
double default_regularization(const ProjectionBasis& v);

/// Projects every channel onto span(V): V (V^T V + reg I)^-1 V^T m_c. With no
/// reg given, default_regularization() is used. reg == 0 with cond(V^T V) above
/// 1e12 throws SingularBasis.
FeatureMap lrr_project(const FeatureMap& m, const ProjectionBasis& v,
                       std::optional<double> reg = std::nullopt);

/// Cumulative singular-value energy of the HW x C matrix (no centering):
/// profile[k-1] = sum_{i<=k} s_i^2 / sum s_i^2. Empty for an all-zero map.
std::vector<double> pca_energy(const FeatureMap& m);

/// Fractional number of components at which the piecewise-linear interpolant
/// of (0, 0), (1, profile[0]), ... first reaches t.
double npc(std::span<const double> profile, double t);

}  // namespace hflow
