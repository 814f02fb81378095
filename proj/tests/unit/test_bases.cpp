#include <chrono>
#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "hflow/bases.hpp"
#include "hflow/error.hpp"
#include "hflow/geometry.hpp"
#include "hflow/rng.hpp"
#include "test_util.hpp"

namespace hflow {
namespace {

double orthonormality_error(const BasisSet& b) {
  return (b.q().transpose() * b.q() - Eigen::MatrixXd::Identity(kNumBases, kNumBases))
      .cwiseAbs()
      .maxCoeff();
}

// Flow in normalized units, flattened dx block then dy block.
Eigen::VectorXd normalized_vector(const FlowField& f) {
  const std::size_t n = f.pixel_count();
  Eigen::VectorXd v(2 * n);
  const double sx = center_offset(f.width()), sy = center_offset(f.height());
  for (std::size_t k = 0; k < n; ++k) {
    v(static_cast<Eigen::Index>(k)) = f.data()[k] / sx;
    v(static_cast<Eigen::Index>(n + k)) = f.data()[n + k] / sy;
  }
  return v;
}

// Least-squares projection residual solved from the raw tangent fields with
// a pivoted QR, independent of the library's basis.
double brute_force_residual(const FlowField& f) {
  const auto fields = tangent_fields(f.width(), f.height());
  const Eigen::VectorXd v = normalized_vector(f);
  Eigen::MatrixXd m(v.size(), kNumBases);
  for (int k = 0; k < kNumBases; ++k) {
    for (std::size_t i = 0; i < fields[k].data().size(); ++i) {
      m(static_cast<Eigen::Index>(i), k) = fields[k].data()[i];
    }
  }
  const Eigen::VectorXd coef = m.colPivHouseholderQr().solve(v);
  return (v - m * coef).norm() / std::max(v.norm(), 1e-12);
}

TEST(TangentFields, MatchAnalyticForms) {
  const int w = 7, h = 5;
  const auto t = tangent_fields(w, h);
  ASSERT_EQ(t.size(), 8u);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double u = centered_x(j, w) / center_offset(w);
      const double v = centered_y(i, h) / center_offset(h);
      const double ex[8][2] = {{u, 0}, {v, 0}, {1, 0}, {0, u}, {0, v}, {0, 1},
                               {-u * u, -u * v}, {-u * v, -v * v}};
      for (int k = 0; k < 8; ++k) {
        EXPECT_DOUBLE_EQ(t[k].dx(i, j), ex[k][0]);
        EXPECT_DOUBLE_EQ(t[k].dy(i, j), ex[k][1]);
      }
    }
  }
  // Field 7 vanishes at the grid center.
  EXPECT_EQ(t[6].dx(2, 3), 0.0);
  EXPECT_EQ(t[6].dy(2, 3), 0.0);
}

TEST(TangentFields, RejectTinyGrid) {
  EXPECT_THROW(tangent_fields(1, 5), Error);
}

TEST(FiniteDifferenceFields, LinearEntriesEqualTangents) {
  const auto t = tangent_fields(9, 7);
  for (double eps : {1e-3, 0.05, 0.1}) {
    const auto fd = finite_difference_fields(9, 7, eps);
    for (int k = 0; k < 6; ++k) {
      EXPECT_LT(testing::max_abs(fd[k].data(), t[k].data()), 1e-12) << "k " << k << " eps " << eps;
    }
  }
}

TEST(FiniteDifferenceFields, PerspectiveEntriesConvergeLinearly) {
  const auto t = tangent_fields(33, 21);
  double prev = 0.0;
  for (double eps : {1e-3, 1e-4}) {
    const auto fd = finite_difference_fields(33, 21, eps);
    double err = 0.0;
    for (int k = 6; k < 8; ++k) err = std::max(err, testing::max_abs(fd[k].data(), t[k].data()));
    EXPECT_LT(err, 2 * eps);
    if (prev > 0.0) EXPECT_NEAR(prev / err, 10.0, 1.0);  // O(eps)
    prev = err;
  }
}

TEST(FiniteDifferenceFields, Field7MatchesHomographyFlowOracle) {
  const int w = 33, h = 21;
  const double eps = 1e-4;
  // Entry (3,1) perturbation expressed in pixel coordinates: u = x / sx, so the
  // normalized-coordinate entry eps becomes eps / sx on x.
  const double sx = center_offset(w), sy = center_offset(h);
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(2, 0) = eps / sx;
  const FlowField px = homography_to_flow(Homography(m), w, h);
  const auto t = tangent_fields(w, h);
  double err = 0.0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      err = std::max(err, std::abs(px.dx(i, j) / sx / eps - t[6].dx(i, j)));
      err = std::max(err, std::abs(px.dy(i, j) / sy / eps - t[6].dy(i, j)));
    }
  }
  EXPECT_LT(err, 2e-4);
}

TEST(FiniteDifferenceFields, RejectsBadEpsilon) {
  for (double eps : {0.0, -1e-3, 0.2}) {
    try {
      finite_difference_fields(8, 8, eps);
      ADD_FAILURE() << "eps " << eps;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
    }
  }
}

TEST(Build, OrthonormalAcrossSizes) {
  for (auto [w, h] : {std::pair{3, 3}, {8, 8}, {63, 48}, {127, 127}, {576, 320}}) {
    const BasisSet b = build(w, h);
    EXPECT_LT(orthonormality_error(b), 1e-10) << w << "x" << h;
    for (int k = 0; k < kNumBases; ++k) EXPECT_NEAR(b.q().col(k).norm(), 1.0, 1e-12);
  }
}

TEST(Build, FactorizationAndSigns) {
  const BasisSet b = build(63, 48);
  const auto t = tangent_fields(63, 48);
  Eigen::MatrixXd m(b.q().rows(), kNumBases);
  for (int k = 0; k < kNumBases; ++k) {
    EXPECT_GT(b.norms()[k], 0.0);
    for (std::size_t i = 0; i < t[k].data().size(); ++i) {
      m(static_cast<Eigen::Index>(i), k) = t[k].data()[i] / b.norms()[k];
    }
    EXPECT_GT(b.r()(k, k), 0.0);
    for (int r = k + 1; r < kNumBases; ++r) EXPECT_EQ(b.r()(r, k), 0.0);
  }
  EXPECT_LT((m - b.q() * b.r()).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((b.r() * b.r_inverse() - Eigen::Matrix<double, 8, 8>::Identity()).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(Build, NormsAreMaxMagnitudes) {
  const BasisSet b = build(9, 5);
  // Affine fields peak at |u| = 1 or |v| = 1; quadratic ones at the corners.
  for (int k = 0; k < 6; ++k) EXPECT_DOUBLE_EQ(b.norms()[k], 1.0);
  EXPECT_DOUBLE_EQ(b.norms()[6], std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(b.norms()[7], std::sqrt(2.0));
}

TEST(Build, ReferenceGridIsFast) {
  const auto t0 = std::chrono::steady_clock::now();
  const BasisSet b = build(576, 320);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(s, 1.0);
  EXPECT_EQ(b.q().rows(), 2 * 576 * 320);
}

TEST(Build, Deterministic) {
  const BasisSet a = build(40, 30);
  const BasisSet b = build(40, 30);
  EXPECT_TRUE(a.q() == b.q());
  EXPECT_TRUE(a.r() == b.r());
}

TEST(Build, RejectsTinyGrid) {
  EXPECT_THROW(build(2, 10), Error);
}

TEST(SharedBasis, CachesBySize) {
  auto a = shared_basis(31, 17);
  auto b = shared_basis(31, 17);
  EXPECT_EQ(a.get(), b.get());
  EXPECT_NE(shared_basis(17, 31).get(), a.get());
}

TEST(Synthesize, ZeroAndUnitWeights) {
  const BasisSet b = build(12, 10);
  const FlowField zero = synthesize(b, BasisWeights::zero());
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  for (int k = 0; k < kNumBases; ++k) {
    const FlowField f = synthesize(b, BasisWeights::unit(k));
    const Eigen::VectorXd v = normalized_vector(f);
    EXPECT_LT((v - b.q().col(k)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Analyze, ZeroFlow) {
  const BasisSet b = build(12, 10);
  const Projection p = analyze(b, FlowField(12, 10));
  EXPECT_EQ(p.weights, BasisWeights::zero());
  EXPECT_EQ(p.residual, 0.0);
}

TEST(Analyze, IdempotentOnWeights) {
  const BasisSet b = build(64, 48);
  CounterRng rng(21, 0);
  for (int t = 0; t < 20; ++t) {
    BasisWeights w;
    for (double& a : w.alpha) a = rng.uniform(-2, 2);
    const Projection p = analyze(b, synthesize(b, w));
    for (int k = 0; k < kNumBases; ++k) EXPECT_NEAR(p.weights.alpha[k], w.alpha[k], 1e-10);
    EXPECT_LT(p.residual, 1e-10);
  }
}

TEST(Analyze, AffineFlowsLieInSpan) {
  const BasisSet b = build(80, 60);
  CounterRng rng(22, 0);
  for (int t = 0; t < 50; ++t) {
    const Projection p = analyze(b, homography_to_flow(testing::random_affine(rng), 80, 60));
    EXPECT_LT(p.residual, 1e-9);
  }
}

TEST(Analyze, SmallBaselineMatchesBruteForceOracle) {
  const int w = 96, h = 64;
  const BasisSet b = build(w, h);
  CounterRng rng(23, 0);
  for (int t = 0; t < 20; ++t) {
    const FlowField f = homography_to_flow(testing::random_corner_homography(rng, w, h, 0.02 * h), w, h);
    const Projection p = analyze(b, f);
    EXPECT_NEAR(p.residual, brute_force_residual(f), 1e-9);
    EXPECT_LT(p.residual, 0.01);
    const FlowField back = synthesize(b, p.weights);
    EXPECT_NEAR((normalized_vector(back) - normalized_vector(f)).norm() /
                    normalized_vector(f).norm(),
                p.residual, 1e-12);
  }
}

TEST(Analyze, ResidualGrowsQuadraticallyWithBaseline) {
  const int w = 96, h = 64;
  const BasisSet b = build(w, h);
  // Same direction of corner offsets, scaled.
  CounterRng rng(24, 0);
  std::array<Point2, 4> dir{};
  for (auto& d : dir) d = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
  const double hx = center_offset(w), hy = center_offset(h);
  const std::array<Point2, 4> corners{{{-hx, -hy}, {hx, -hy}, {hx, hy}, {-hx, hy}}};
  auto residual = [&](double rho) {
    std::array<PointPair, 4> pairs{};
    for (std::size_t c = 0; c < 4; ++c) {
      pairs[c] = {corners[c], {corners[c].x + rho * h * dir[c].x, corners[c].y + rho * h * dir[c].y}};
    }
    return analyze(b, homography_to_flow(dlt(pairs), w, h)).residual_norm;
  };
  double prev = residual(0.25);
  for (double rho : {0.125, 0.0625}) {
    const double r = residual(rho);
    EXPECT_LT(r, prev / 2);
    prev = r;
  }
  // Relative residual also increases with the baseline.
  EXPECT_GT(analyze(b, homography_to_flow(testing::random_corner_homography(rng, w, h, 0.25 * h), w, h))
                .residual,
            0.01);
}

TEST(Analyze, DimensionMismatch) {
  const BasisSet b = build(12, 10);
  try {
    analyze(b, FlowField(10, 12));
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
}

TEST(EvaluateAt, MatchesGridColumns) {
  const int w = 21, h = 13;
  const BasisSet b = build(w, h);
  std::vector<Point2> pts;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) pts.push_back({centered_x(j, w), centered_y(i, h)});
  }
  const auto rows = evaluate_at(b, pts);
  const auto n = static_cast<Eigen::Index>(b.pixel_count());
  for (Eigen::Index k = 0; k < n; ++k) {
    EXPECT_LT((rows[static_cast<std::size_t>(k)].row(0) - b.q().row(k)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((rows[static_cast<std::size_t>(k)].row(1) - b.q().row(n + k)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(EvaluateAt, TranslationBasesAreConstant) {
  const BasisSet b = build(21, 13);
  // On the centered grid the translation tangent is orthogonal to the linear
  // ones, so q_3 only sees the constant field: value R^-1(2, 2) everywhere.
  EXPECT_NEAR(b.r()(0, 2), 0.0, 1e-12);
  EXPECT_NEAR(b.r()(1, 2), 0.0, 1e-12);
  const std::vector<Point2> pts{{0, 0}, {5, -3}, {-10, 6}, {2.5, 1.25}};
  const auto rows = evaluate_at(b, pts);
  for (const auto& r : rows) {
    EXPECT_NEAR(r(0, 2), b.r_inverse()(2, 2), 1e-12);
    EXPECT_NEAR(r(1, 2), 0.0, 1e-15);
  }
}

TEST(EvaluateAt, AgreesWithBilinearSampleOffGrid) {
  const int w = 64, h = 48;
  const BasisSet b = build(w, h);
  CounterRng rng(25, 0);
  std::vector<Point2> pts;
  for (int k = 0; k < 1000; ++k) {
    pts.push_back({rng.uniform(-center_offset(w), center_offset(w)),
                   rng.uniform(-center_offset(h), center_offset(h))});
  }
  const auto rows = evaluate_at(b, pts);
  double err = 0.0;
  for (int k = 0; k < kNumBases; ++k) {
    const FlowField f = synthesize(b, BasisWeights::unit(k));
    for (std::size_t p = 0; p < pts.size(); ++p) {
      const auto tap = bilinear_tap(pts[p].x + center_offset(w), pts[p].y + center_offset(h), w, h);
      ASSERT_TRUE(tap);
      const double dx = tap->sample(f.dx_plane(), w) / b.scale_x();
      const double dy = tap->sample(f.dy_plane(), w) / b.scale_y();
      err = std::max({err, std::abs(dx - rows[p](0, k)), std::abs(dy - rows[p](1, k))});
    }
  }
  EXPECT_LT(err, 1e-3);
}

TEST(PixelJacobian, ScalesNormalizedRows) {
  const BasisSet b = build(30, 20);
  const Point2 p{3.25, -4.5};
  const BasisRows n = evaluate_at(b, std::vector<Point2>{p})[0];
  const BasisRows j = pixel_jacobian(b, p);
  EXPECT_LT((j.row(0) - n.row(0) * b.scale_x()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((j.row(1) - n.row(1) * b.scale_y()).cwiseAbs().maxCoeff(), 1e-15);
}

}  // namespace
}  // namespace hflow
