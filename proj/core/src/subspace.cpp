#include "hflow/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "hflow/error.hpp"
#include "hflow/rng.hpp"

namespace hflow {

namespace {

constexpr double kMaxCondition = 1e12;

void check_dims(int width, int height, int channels) {
  if (width <= 0 || height <= 0 || channels <= 0) {
    fail(ErrorCode::kInvalidArgument, "feature map dimensions must be positive");
  }
}

}  // namespace

FeatureMap::FeatureMap(int width, int height, int channels)
    : width_(width), height_(height), channels_(channels) {
  check_dims(width, height, channels);
  data_.assign(pixel_count() * channels, 0.0);
}

FeatureMap::FeatureMap(int width, int height, int channels, std::vector<double> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
  check_dims(width, height, channels);
  if (data_.size() != pixel_count() * channels) {
    fail(ErrorCode::kDimensionMismatch, "feature data length does not match W*H*C");
  }
  if (!std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); })) {
    fail(ErrorCode::kInvalidArgument, "feature map has non-finite values");
  }
}

Eigen::MatrixXd FeatureMap::as_matrix() const {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMajor>(data_.data(), static_cast<Eigen::Index>(pixel_count()),
                                    channels_);
}

FeatureMap FeatureMap::from_matrix(int width, int height, const Eigen::MatrixXd& m) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  if (m.rows() != static_cast<Eigen::Index>(width) * height) {
    fail(ErrorCode::kDimensionMismatch, "matrix rows must equal W*H");
  }
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  Eigen::Map<RowMajor>(data.data(), m.rows(), m.cols()) = m;
  return FeatureMap(width, height, static_cast<int>(m.cols()), std::move(data));
}

ProjectionBasis::ProjectionBasis(int width, int height, Eigen::MatrixXd v)
    : width_(width), height_(height), v_(std::move(v)) {
  check_dims(width, height, 1);
  if (v_.rows() != static_cast<Eigen::Index>(width) * height) {
    fail(ErrorCode::kDimensionMismatch, "basis rows must equal W*H");
  }
  if (v_.cols() < 1 || v_.cols() > v_.rows()) {
    fail(ErrorCode::kInvalidArgument, "basis rank K must satisfy 1 <= K <= W*H");
  }
  if (!v_.allFinite()) fail(ErrorCode::kInvalidArgument, "basis has non-finite values");
  for (Eigen::Index c = 0; c < v_.cols(); ++c) {
    if (v_.col(c).cwiseAbs().maxCoeff() == 0.0) {
      fail(ErrorCode::kInvalidArgument, "basis column " + std::to_string(c) + " is zero");
    }
  }
}

ProjectionBasis ProjectionBasis::canonical(int width, int height, int k) {
  const auto n = static_cast<Eigen::Index>(width) * height;
  return ProjectionBasis(width, height, Eigen::MatrixXd::Identity(n, k));
}

ProjectionBasis ProjectionBasis::random_gaussian(int width, int height, int k,
                                                 std::uint64_t seed) {
  CounterRng rng(seed, 0x5355425350414345ULL);  // "SUBSPACE"
  Eigen::MatrixXd v(static_cast<Eigen::Index>(width) * height, k);
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    for (Eigen::Index r = 0; r < v.rows(); ++r) v(r, c) = rng.normal();
  }
  return ProjectionBasis(width, height, std::move(v));
}

ProjectionBasis ProjectionBasis::random_orthonormal(int width, int height, int k,
                                                    std::uint64_t seed) {
  const auto g = random_gaussian(width, height, k, seed);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g.v());
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.v().rows(), k);
  return ProjectionBasis(width, height, std::move(q));
}

ProjectionBasis ProjectionBasis::from_feature_map(const FeatureMap& m) {
  return ProjectionBasis(m.width(), m.height(), m.as_matrix());
}

double default_regularization(const ProjectionBasis& v) {
  return 1e-8 * v.v().squaredNorm() / v.rank();
}

FeatureMap lrr_project(const FeatureMap& m, const ProjectionBasis& v, std::optional<double> reg) {
  if (m.width() != v.width() || m.height() != v.height()) {
    fail(ErrorCode::kDimensionMismatch, "feature map and basis spatial sizes differ");
  }
  const double ridge = reg.value_or(default_regularization(v));
  if (!(ridge >= 0.0)) fail(ErrorCode::kInvalidArgument, "regularization must be >= 0");

  const Eigen::MatrixXd& basis = v.v();
  Eigen::MatrixXd gram = basis.transpose() * basis;
  if (ridge == 0.0) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > kMaxCondition) {
      fail(ErrorCode::kSingularBasis, "V^T V is singular or has condition number above 1e12");
    }
  } else {
    gram.diagonal().array() += ridge;
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) {
    fail(ErrorCode::kSingularBasis, "V^T V + reg I is not positive definite");
  }
  const Eigen::MatrixXd input = m.as_matrix();
  const Eigen::MatrixXd coeffs = llt.solve(basis.transpose() * input);
  return FeatureMap::from_matrix(m.width(), m.height(), basis * coeffs);
}

std::vector<double> pca_energy(const FeatureMap& m) {
  const Eigen::BDCSVD<Eigen::MatrixXd> svd(m.as_matrix());
  const Eigen::VectorXd s2 = svd.singularValues().array().square();
  const double total = s2.sum();
  if (!(total > 0.0)) return {};
  std::vector<double> profile(static_cast<std::size_t>(s2.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < s2.size(); ++i) {
    acc += s2(i);
    profile[static_cast<std::size_t>(i)] = std::min(acc / total, 1.0);
  }
  profile.back() = 1.0;
  return profile;
}

double npc(std::span<const double> profile, double t) {
  if (!(t > 0.0 && t <= 1.0)) fail(ErrorCode::kInvalidArgument, "npc threshold must be in (0, 1]");
  double prev = 0.0;
  for (std::size_t k = 0; k < profile.size(); ++k) {
    const double cur = profile[k];
    if (cur >= t) {
      return static_cast<double>(k) + (t - prev) / (cur - prev);
    }
    prev = cur;
  }
  fail(ErrorCode::kInvalidArgument, "energy profile never reaches the threshold");
}

}  // namespace hflow
