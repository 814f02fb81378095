#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hflow/geometry.hpp"
#include "hflow/textures.hpp"

namespace hflow {

inline constexpr int kBenchPointPairs = 6;

// A rectangular region of the target image that follows an independent motion:
// its pixels are rendered from source position gt^-1(p) + shift.
struct OutlierBlock {
  int x0 = 0, y0 = 0;  // top-left pixel index in the target grid
  int width = 0, height = 0;
  double shift_x = 0.0, shift_y = 0.0;  // source-frame pixels

  bool contains(int row, int col) const {
    return col >= x0 && col < x0 + width && row >= y0 && row < y0 + height;
  }
};

struct OutlierSpec {
  double area_fraction = 0.2;  // of width * height, per block
  double shift_x = 10.0;
  double shift_y = 0.0;
  int count = 1;
};

struct BenchSpec {
  std::string id = "default";
  std::uint64_t seed = 0;
  int width = 576;
  int height = 320;
  int count = 1;  // samples produced by run_suite / synth
  double rho = 8.0;
  double noise_sigma = 0.0;
  double gain_min = 1.0, gain_max = 1.0;
  double bias_min = 0.0, bias_max = 0.0;
  TextureKind texture = TextureKind::kValueNoise;
  std::optional<OutlierSpec> outlier;

  /// Margin (pixels) a base image needs on every side of the crop.
  int required_margin() const;
  void validate() const;
};

struct BenchSample {
  GrayImage i_a;
  GrayImage i_b;
  Homography gt;  // a -> b, centered pixel coordinates
  std::array<PointPair, kBenchPointPairs> gt_points{};
  std::vector<OutlierBlock> outliers;

  /// True inside outlier blocks; nullopt when there are none.
  std::optional<ValidityMask> outlier_mask() const;
};

/// Base image sized for the spec: (W + 2m) x (H + 2m), m = required_margin().
GrayImage default_base(const BenchSpec& spec, std::uint64_t sample_index);

/// Deterministic in (base, spec, sample_index). Throws SpecInfeasible when the
/// base is too small or no outlier-free point layout exists.
BenchSample gen_pair(const GrayImage& base, const BenchSpec& spec, std::uint64_t sample_index = 0);

/// gen_pair on default_base.
BenchSample gen_sample(const BenchSpec& spec, std::uint64_t sample_index);

/// Backward flow on the target grid that carries the true motion, including the
/// outlier blocks' independent translation.
FlowField ground_truth_backward_flow(const BenchSample& s);

std::vector<double> point_errors(const Homography& h_est, std::span<const PointPair> gt_points);

/// Mean over pairs of ||apply(h_est, src) - dst||.
double point_matching_error(const Homography& h_est, std::span<const PointPair> gt_points);

/// 0.1, 0.2, ..., 3.0.
std::vector<double> default_thresholds();

/// Fraction of errors strictly below each threshold.
std::vector<std::pair<double, double>> robustness_curve(std::span<const double> errors,
                                                        std::span<const double> thresholds);

// kFitRobustGtFlow: Welsch IRLS on the true dense flow (outlier blocks included).
// kAlignNormalized: align_direct on z-scored intensities, for gain changes.
enum class Method { kIdentity, kFitRobustGtFlow, kAlign, kAlignNormalized };

std::string to_string(Method m);
Method parse_method(const std::string& name);

struct SampleResult {
  std::string spec_id;
  std::uint64_t sample_idx = 0;
  Method method = Method::kIdentity;
  double mean_error_px = 0.0;
  double valid_fraction = 0.0;
  std::string status = "ok";  // ok | nonconverged | error:<Code>
  std::vector<double> point_errors;
  Homography estimate;
};

SampleResult evaluate_sample(const BenchSample& s, Method method, const std::string& spec_id,
                             std::uint64_t sample_idx);

struct SuiteReport {
  std::vector<SampleResult> rows;      // method rows, sorted by (spec order, index)
  std::vector<SampleResult> baseline;  // identity rows, same order
  std::vector<std::pair<double, double>> curve;  // method rows, all point errors
};

/// Generates every sample of every spec and evaluates `method` plus the
/// identity baseline. Results are ordered by (spec, index) for any job count.
SuiteReport run_suite(std::span<const BenchSpec> specs, Method method, int jobs = 1);

/// Orders jobs, evaluates with `jobs` threads, and assembles the report.
SuiteReport evaluate_suite(std::span<const std::pair<std::string, std::uint64_t>> keys,
                           const std::function<BenchSample(std::size_t)>& load, Method method,
                           int jobs = 1);

/// Columns: spec_id,sample_idx,method,mean_error_px,valid_fraction,status. Per
/// spec, sample rows are followed by a "mean" row for the method and one for the
/// identity baseline.
std::string format_results_csv(const SuiteReport& report);
std::string format_curve_csv(std::span<const std::pair<double, double>> curve);

// On-disk sample layout: a.pgm, b.pgm, gt.json (matrix + outlier blocks),
// points.json (six src/dst pairs).
void write_sample_dir(const std::filesystem::path& dir, const BenchSample& s);
BenchSample read_sample_dir(const std::filesystem::path& dir);

/// Spec JSON: one spec object or {"specs": [...]}. Unknown keys are rejected.
std::vector<BenchSpec> parse_bench_specs(const std::string& json_text);

}  // namespace hflow
