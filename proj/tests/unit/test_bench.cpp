#include <cmath>
#include <filesystem>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "hflow/bench.hpp"
#include "hflow/error.hpp"
#include "test_util.hpp"

namespace hflow {
namespace {

BenchSpec small_spec(std::uint64_t seed, double rho) {
  BenchSpec s;
  s.seed = seed;
  s.width = 160;
  s.height = 96;
  s.rho = rho;
  return s;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no hflow::Error thrown";
  return ErrorCode::kInvalidArgument;
}

TEST(BenchSpec, DefaultsToReferenceGrid) {
  const BenchSpec s;
  EXPECT_EQ(s.width, 576);
  EXPECT_EQ(s.height, 320);
}

TEST(BenchSpec, Validation) {
  BenchSpec s = small_spec(0, -1.0);
  EXPECT_EQ(code_of([&] { s.validate(); }), ErrorCode::kSpecInfeasible);
  s = small_spec(0, 2.0);
  s.noise_sigma = -0.1;
  EXPECT_EQ(code_of([&] { s.validate(); }), ErrorCode::kSpecInfeasible);
  s = small_spec(0, 2.0);
  s.outlier = OutlierSpec{1.5, 10, 0, 1};
  EXPECT_EQ(code_of([&] { s.validate(); }), ErrorCode::kSpecInfeasible);
}

TEST(GenPair, ZeroPerturbationIsIdentity) {
  const BenchSample s = gen_sample(small_spec(3, 0.0), 0);
  EXPECT_EQ(s.gt, Homography::identity());
  EXPECT_EQ(s.i_a, s.i_b);
}

TEST(GenPair, Deterministic) {
  BenchSpec spec = small_spec(5, 6.0);
  spec.noise_sigma = 0.01;
  spec.gain_min = 0.8;
  spec.gain_max = 1.2;
  spec.outlier = OutlierSpec{0.05, 8, 2, 2};
  const BenchSample a = gen_sample(spec, 4);
  const BenchSample b = gen_sample(spec, 4);
  EXPECT_EQ(a.i_a, b.i_a);
  EXPECT_EQ(a.i_b, b.i_b);
  EXPECT_EQ(a.gt, b.gt);
  const BenchSample c = gen_sample(spec, 5);
  EXPECT_FALSE(c.i_b == a.i_b);
}

TEST(GenPair, GroundTruthPointsAreConsistent) {
  BenchSpec spec = small_spec(6, 8.0);
  spec.outlier = OutlierSpec{0.3, 10, 0, 1};
  for (std::uint64_t i = 0; i < 20; ++i) {
    const BenchSample s = gen_sample(spec, i);
    ASSERT_EQ(s.gt_points.size(), 6u);
    for (const auto& pp : s.gt_points) {
      const Point2 q = apply(s.gt, pp.src);
      EXPECT_NEAR(q.x, pp.dst.x, 1e-9);
      EXPECT_NEAR(q.y, pp.dst.y, 1e-9);
      const int col = static_cast<int>(std::lround(pp.dst.x + center_offset(spec.width)));
      const int row = static_cast<int>(std::lround(pp.dst.y + center_offset(spec.height)));
      for (const auto& blk : s.outliers) EXPECT_FALSE(blk.contains(row, col));
    }
    EXPECT_EQ(point_matching_error(s.gt, s.gt_points), 0.0);
  }
}

TEST(GenPair, RendersTargetThroughInverseHomography) {
  const BenchSpec spec = small_spec(7, 5.0);
  const GrayImage base = default_base(spec, 0);
  const BenchSample s = gen_pair(base, spec, 0);
  // i_a is the centered crop of the base.
  const int ox = (base.width() - spec.width) / 2, oy = (base.height() - spec.height) / 2;
  EXPECT_EQ(s.i_a.at(10, 20), base.at(10 + oy, 20 + ox));
  // Interior pixel of i_b equals the base sampled at gt^-1(p).
  const int i = 40, j = 70;
  const Point2 src = apply(invert(s.gt), {centered_x(j, spec.width), centered_y(i, spec.height)});
  const auto tap = bilinear_tap(src.x + center_offset(spec.width) + ox,
                                src.y + center_offset(spec.height) + oy, base.width(), base.height());
  ASSERT_TRUE(tap);
  EXPECT_NEAR(s.i_b.at(i, j), tap->sample(base.pixels(), base.width()), 1e-15);
}

TEST(GenPair, BaseTooSmall) {
  const BenchSpec spec = small_spec(8, 8.0);
  EXPECT_EQ(code_of([&] { gen_pair(GrayImage(162, 98), spec, 0); }), ErrorCode::kSpecInfeasible);
}

TEST(GenPair, OutlierBlockFollowsItsOwnMotion) {
  BenchSpec spec = small_spec(9, 0.0);
  spec.outlier = OutlierSpec{0.2, 10, 0, 1};
  const BenchSample s = gen_sample(spec, 0);
  ASSERT_EQ(s.outliers.size(), 1u);
  const OutlierBlock& b = s.outliers[0];
  EXPECT_NEAR(static_cast<double>(b.width * b.height) / (160 * 96), 0.2, 0.01);
  const int i = b.y0 + b.height / 2, j = b.x0 + b.width / 2;
  EXPECT_EQ(s.i_b.at(i, j), s.i_a.at(i, j + 10));
  const ValidityMask m = *s.outlier_mask();
  EXPECT_TRUE(m.valid(i, j));
  EXPECT_NEAR(m.valid_fraction(), 0.2, 0.01);
  const FlowField f = ground_truth_backward_flow(s);
  EXPECT_EQ(f.dx(i, j), 10.0);
  const int outside_row = b.y0 > 0 ? 0 : 95;
  EXPECT_EQ(f.dx(outside_row, j), 0.0);
}

TEST(GenPair, IdentityBaselineTracksCornerOffsets) {
  BenchSpec spec;
  spec.seed = 3;
  spec.rho = 8.0;
  double err = 0.0, corners = 0.0;
  const double hx = center_offset(spec.width), hy = center_offset(spec.height);
  for (std::uint64_t i = 0; i < 100; ++i) {
    const BenchSample s = gen_sample(spec, i);
    err += point_matching_error(Homography::identity(), s.gt_points);
    for (Point2 p : {Point2{-hx, -hy}, Point2{hx, -hy}, Point2{hx, hy}, Point2{-hx, hy}}) {
      const Point2 q = apply(s.gt, p);
      corners += std::hypot(q.x - p.x, q.y - p.y) / 4.0;
    }
  }
  EXPECT_NEAR(err / corners, 1.0, 0.2);
}

TEST(PointMatchingError, TranslationAndHandComputedMean) {
  std::array<PointPair, 6> pts{};
  for (int k = 0; k < 6; ++k) {
    const Point2 p{10.0 * k - 25.0, 7.0 * (k % 2) - 3.0};
    pts[static_cast<std::size_t>(k)] = {p, {p.x + 3.0, p.y - 4.0}};
  }
  EXPECT_DOUBLE_EQ(point_matching_error(Homography::identity(), pts), 5.0);

  const Homography est = Homography::translation(2.0, -3.5);
  double sum = 0.0;
  for (const auto& pp : pts) {
    const double ex = pp.src.x + 2.0 - pp.dst.x, ey = pp.src.y - 3.5 - pp.dst.y;
    sum += std::sqrt(ex * ex + ey * ey);
  }
  EXPECT_NEAR(point_matching_error(est, pts), sum / 6.0, 1e-12);
}

TEST(PointMatchingError, AlignEstimateMatchesScalarRecomputation) {
  const BenchSample s = gen_sample(small_spec(10, 4.0), 0);
  const SampleResult r = evaluate_sample(s, Method::kAlign, "x", 0);
  const Eigen::Matrix3d& m = r.estimate.matrix();
  double sum = 0.0;
  for (const auto& pp : s.gt_points) {
    const double w = m(2, 0) * pp.src.x + m(2, 1) * pp.src.y + m(2, 2);
    const double x = (m(0, 0) * pp.src.x + m(0, 1) * pp.src.y + m(0, 2)) / w;
    const double y = (m(1, 0) * pp.src.x + m(1, 1) * pp.src.y + m(1, 2)) / w;
    sum += std::sqrt((x - pp.dst.x) * (x - pp.dst.x) + (y - pp.dst.y) * (y - pp.dst.y));
  }
  EXPECT_NEAR(r.mean_error_px, sum / 6.0, 1e-12);
  EXPECT_LT(r.mean_error_px, 0.5);
}

TEST(RobustnessCurve, Fixtures) {
  const std::vector<double> zeros(5, 0.0);
  for (const auto& [t, f] : robustness_curve(zeros, default_thresholds())) EXPECT_EQ(f, 1.0);
  const std::vector<double> e{0.05, 0.5, 2.5};
  const std::vector<double> t{1.0, 0.5, 0.05};
  const auto c = robustness_curve(e, t);
  EXPECT_DOUBLE_EQ(c[0].second, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(c[1].second, 1.0 / 3.0);  // strictly below
  EXPECT_DOUBLE_EQ(c[2].second, 0.0);
}

TEST(RobustnessCurve, DefaultSweepAndMonotone) {
  const auto t = default_thresholds();
  ASSERT_EQ(t.size(), 30u);
  EXPECT_DOUBLE_EQ(t.front(), 0.1);
  EXPECT_DOUBLE_EQ(t.back(), 3.0);
  CounterRng rng(38, 0);
  std::vector<double> e(200);
  for (double& v : e) v = std::abs(rng.normal()) * 1.5;
  const auto c = robustness_curve(e, t);
  for (std::size_t k = 1; k < c.size(); ++k) EXPECT_GE(c[k].second, c[k - 1].second);
  for (const auto& [th, f] : c) {
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
  }
}

TEST(Method, Names) {
  for (auto m : {Method::kIdentity, Method::kFitRobustGtFlow, Method::kAlign,
                 Method::kAlignNormalized}) {
    EXPECT_EQ(parse_method(to_string(m)), m);
  }
  EXPECT_EQ(to_string(Method::kAlignNormalized), "align_normalized");
  EXPECT_THROW(parse_method("ransac"), Error);
}

TEST(EvaluateSample, NormalizedAlignHandlesLowGain) {
  BenchSpec spec;
  spec.seed = 21;
  spec.width = 192;
  spec.height = 128;
  spec.rho = 6.0;
  spec.gain_min = spec.gain_max = 0.3;
  spec.noise_sigma = 0.01;
  for (std::uint64_t idx = 0; idx < 3; ++idx) {
    const BenchSample s = gen_sample(spec, idx);
    const SampleResult r = evaluate_sample(s, Method::kAlignNormalized, "low_light", idx);
    EXPECT_LT(r.mean_error_px, 0.5) << idx;
    EXPECT_LT(r.mean_error_px, evaluate_sample(s, Method::kIdentity, "low_light", idx).mean_error_px);
  }
}

TEST(RunSuite, IdentityOnZeroBaselineIsZero) {
  BenchSpec spec = small_spec(11, 0.0);
  spec.count = 4;
  const std::vector<BenchSpec> specs{spec};
  const SuiteReport r = run_suite(specs, Method::kIdentity);
  ASSERT_EQ(r.rows.size(), 4u);
  for (const auto& row : r.rows) EXPECT_EQ(row.mean_error_px, 0.0);
}

TEST(RunSuite, IdentityErrorLinearInRho) {
  std::vector<double> means;
  for (double rho : {2.0, 4.0, 8.0}) {
    BenchSpec spec = small_spec(12, rho);
    spec.count = 20;
    const std::vector<BenchSpec> specs{spec};
    const SuiteReport r = run_suite(specs, Method::kIdentity);
    double m = 0.0;
    for (const auto& row : r.rows) m += row.mean_error_px;
    means.push_back(m / 20.0);
  }
  EXPECT_NEAR(means[1] / means[0], 2.0, 0.1);
  EXPECT_NEAR(means[2] / means[1], 2.0, 0.1);
}

TEST(RunSuite, AlignBeatsIdentityAndOrderIsJobIndependent) {
  BenchSpec spec = small_spec(13, 8.0);
  spec.count = 6;
  spec.noise_sigma = 2.0 / 255.0;
  BenchSpec other = small_spec(14, 0.0);
  other.id = "flat";
  other.count = 2;
  const std::vector<BenchSpec> specs{spec, other};
  const SuiteReport one = run_suite(specs, Method::kAlign, 1);
  const SuiteReport three = run_suite(specs, Method::kAlign, 3);
  EXPECT_EQ(format_results_csv(one), format_results_csv(three));
  EXPECT_EQ(format_curve_csv(one.curve), format_curve_csv(three.curve));
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_EQ(one.rows[k].spec_id, "default");
    EXPECT_EQ(one.rows[k].sample_idx, k);
    EXPECT_LT(one.rows[k].mean_error_px, one.baseline[k].mean_error_px);
  }
  EXPECT_EQ(one.rows[6].spec_id, "flat");
}

TEST(RunSuite, FailuresBecomeRows) {
  BenchSpec spec = small_spec(15, 2.0);
  spec.texture = TextureKind::kValueNoise;
  spec.count = 1;
  const BenchSample s = gen_sample(spec, 0);
  const GrayImage flat(160, 96, std::vector<double>(160 * 96, 0.5));
  BenchSample broken{flat, flat, s.gt, s.gt_points, {}};
  const SampleResult r = evaluate_sample(broken, Method::kAlign, "broken", 0);
  EXPECT_EQ(r.status, "error:NoTexture");
  EXPECT_TRUE(std::isnan(r.mean_error_px));
  SuiteReport report;
  report.rows.push_back(r);
  report.baseline.push_back(evaluate_sample(broken, Method::kIdentity, "broken", 0));
  const std::string csv = format_results_csv(report);
  EXPECT_NE(csv.find("broken,0,align,nan,0,error:NoTexture"), std::string::npos);
}

TEST(Csv, Schema) {
  BenchSpec spec = small_spec(16, 2.0);
  spec.count = 2;
  const std::vector<BenchSpec> specs{spec};
  const SuiteReport r = run_suite(specs, Method::kIdentity);
  const std::string csv = format_results_csv(r);
  EXPECT_EQ(csv.rfind("spec_id,sample_idx,method,mean_error_px,valid_fraction,status\n", 0), 0u);
  EXPECT_NE(csv.find("default,mean,identity,"), std::string::npos);
  EXPECT_EQ(format_curve_csv(r.curve).rfind("threshold,fraction\n0.1,", 0), 0u);
}

TEST(SampleDir, RoundTrip) {
  BenchSpec spec = small_spec(17, 5.0);
  spec.outlier = OutlierSpec{0.1, 6, -3, 1};
  const BenchSample s = gen_sample(spec, 2);
  const auto dir = std::filesystem::temp_directory_path() / "hflow_sample_dir_test";
  std::filesystem::remove_all(dir);
  write_sample_dir(dir, s);
  const BenchSample back = read_sample_dir(dir);
  // Images pass through 8-bit PGM.
  EXPECT_LT(testing::max_abs(back.i_a.pixels(), s.i_a.pixels()), 0.5 / 255.0 + 1e-12);
  EXPECT_EQ(back.gt, s.gt);
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_EQ(back.gt_points[k].src, s.gt_points[k].src);
    EXPECT_EQ(back.gt_points[k].dst, s.gt_points[k].dst);
  }
  ASSERT_EQ(back.outliers.size(), 1u);
  EXPECT_EQ(back.outliers[0].x0, s.outliers[0].x0);
  EXPECT_EQ(back.outliers[0].shift_y, -3.0);
  std::filesystem::remove_all(dir);
}

TEST(ParseBenchSpecs, SingleAndList) {
  const auto one = parse_bench_specs(R"({"id": "a", "seed": 7, "rho": 4, "gain": [0.3, 0.3]})");
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].seed, 7u);
  EXPECT_EQ(one[0].gain_min, 0.3);
  const auto list = parse_bench_specs(
      R"({"specs": [{"id": "re"}, {"id": "lt", "texture": "low_texture"},
                    {"id": "sf", "outlier": {"area_fraction": 0.05, "shift": [10, 0]}}]})");
  ASSERT_EQ(list.size(), 3u);
  EXPECT_EQ(list[1].texture, TextureKind::kLowTexture);
  ASSERT_TRUE(list[2].outlier);
  EXPECT_EQ(list[2].outlier->area_fraction, 0.05);
}

TEST(ParseBenchSpecs, RejectsMalformed) {
  EXPECT_THROW(parse_bench_specs("{not json"), Error);
  EXPECT_THROW(parse_bench_specs(R"({"rho": 2, "colour": 1})"), Error);
  EXPECT_THROW(parse_bench_specs(R"({"rho": "big"})"), Error);
  EXPECT_THROW(parse_bench_specs(R"({"rho": -2})"), Error);
  EXPECT_THROW(parse_bench_specs(R"({"specs": [{"id": "x"}, {"id": "x"}]})"), Error);
  EXPECT_THROW(parse_bench_specs("[1, 2]"), Error);
}

}  // namespace
}  // namespace hflow
