#include "hflow/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <thread>

#include <json.hpp>

#include "hflow/bases.hpp"
#include "hflow/error.hpp"
#include "hflow/fitting.hpp"
#include "hflow/io.hpp"
#include "hflow/rng.hpp"

namespace hflow {

namespace {

using nlohmann::json;

// Substream ids per sample: stream = sample_index * 16 + purpose.
enum Purpose : std::uint64_t {
  kCorners = 0,
  kPhotometric = 1,
  kNoise = 2,
  kOutliers = 3,
  kPoints = 4,
  kTexture = 5,
};

CounterRng stream(const BenchSpec& spec, std::uint64_t sample_index, Purpose p) {
  return CounterRng(spec.seed, sample_index * 16 + p);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

Point2 to_base(Point2 centered, int width, int height, int ox, int oy) {
  return {centered.x + center_offset(width) + ox, centered.y + center_offset(height) + oy};
}

double sample_base(const GrayImage& base, Point2 idx) {
  const auto tap = bilinear_tap(idx.x, idx.y, base.width(), base.height());
  if (!tap) fail(ErrorCode::kSpecInfeasible, "base image too small for this perturbation");
  return tap->sample(base.pixels(), base.width());
}

bool near_outlier(const std::vector<OutlierBlock>& blocks, Point2 p, int width, int height) {
  constexpr double kClearance = 4.0;
  const double col = p.x + center_offset(width);
  const double row = p.y + center_offset(height);
  return std::any_of(blocks.begin(), blocks.end(), [&](const OutlierBlock& b) {
    return col > b.x0 - kClearance && col < b.x0 + b.width - 1 + kClearance &&
           row > b.y0 - kClearance && row < b.y0 + b.height - 1 + kClearance;
  });
}

bool inside(Point2 p, int width, int height) {
  return std::abs(p.x) <= center_offset(width) && std::abs(p.y) <= center_offset(height);
}

json point_json(Point2 p) { return json::array({p.x, p.y}); }
Point2 point_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

void require_keys(const json& j, const std::set<std::string>& allowed, const char* what) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      fail(ErrorCode::kInvalidArgument,
           std::string(what) + ": unknown key '" + it.key() + "'");
    }
  }
}

BenchSpec spec_from_json(const json& j, std::size_t position) {
  require_keys(j,
               {"id", "seed", "width", "height", "count", "rho", "noise_sigma", "gain", "bias",
                "texture", "outlier"},
               "bench spec");
  BenchSpec s;
  s.id = j.value("id", "spec" + std::to_string(position));
  s.seed = j.value("seed", std::uint64_t{0});
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  s.count = j.value("count", s.count);
  s.rho = j.value("rho", s.rho);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  if (j.contains("gain")) {
    const auto g = j.at("gain").get<std::array<double, 2>>();
    s.gain_min = g[0];
    s.gain_max = g[1];
  }
  if (j.contains("bias")) {
    const auto b = j.at("bias").get<std::array<double, 2>>();
    s.bias_min = b[0];
    s.bias_max = b[1];
  }
  if (j.contains("texture")) s.texture = parse_texture_kind(j.at("texture").get<std::string>());
  if (j.contains("outlier") && !j.at("outlier").is_null()) {
    const json& o = j.at("outlier");
    require_keys(o, {"area_fraction", "shift", "count"}, "outlier spec");
    OutlierSpec os;
    os.area_fraction = o.value("area_fraction", os.area_fraction);
    if (o.contains("shift")) {
      const auto sh = o.at("shift").get<std::array<double, 2>>();
      os.shift_x = sh[0];
      os.shift_y = sh[1];
    }
    os.count = o.value("count", os.count);
    s.outlier = os;
  }
  s.validate();
  return s;
}

}  // namespace

int BenchSpec::required_margin() const {
  double shift = 0.0;
  if (outlier) shift = std::hypot(outlier->shift_x, outlier->shift_y);
  return static_cast<int>(std::ceil(1.5 * rho + shift)) + 4;
}

void BenchSpec::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorCode::kSpecInfeasible, m); };
  if (width < 16 || height < 16) bad("width and height must be >= 16");
  if (count < 1) bad("count must be >= 1");
  if (!(rho >= 0.0) || !std::isfinite(rho)) bad("rho must be >= 0");
  if (!(rho <= 0.25 * std::min(width, height))) bad("rho must be at most 25% of min(W, H)");
  if (!(noise_sigma >= 0.0)) bad("noise_sigma must be >= 0");
  if (!(gain_min > 0.0 && gain_min <= gain_max)) bad("gain range must be positive and ordered");
  if (!(bias_min <= bias_max)) bad("bias range must be ordered");
  if (outlier) {
    if (!(outlier->area_fraction > 0.0 && outlier->area_fraction < 1.0)) {
      bad("outlier area_fraction must be in (0, 1)");
    }
    if (outlier->count < 1) bad("outlier count must be >= 1");
    if (!std::isfinite(outlier->shift_x) || !std::isfinite(outlier->shift_y)) {
      bad("outlier shift must be finite");
    }
  }
}

std::optional<ValidityMask> BenchSample::outlier_mask() const {
  if (outliers.empty()) return std::nullopt;
  const int w = i_b.width(), h = i_b.height();
  std::vector<std::uint8_t> m(i_b.pixel_count(), 0);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      for (const auto& b : outliers) {
        if (b.contains(i, j)) m[static_cast<std::size_t>(i) * w + j] = 1;
      }
    }
  }
  return ValidityMask(w, h, std::move(m));
}

GrayImage default_base(const BenchSpec& spec, std::uint64_t sample_index) {
  spec.validate();
  const int m = spec.required_margin();
  CounterRng rng = stream(spec, sample_index, kTexture);
  return make_texture(spec.texture, spec.width + 2 * m, spec.height + 2 * m, rng.next_u64());
}

BenchSample gen_pair(const GrayImage& base, const BenchSpec& spec, std::uint64_t sample_index) {
  spec.validate();
  const int w = spec.width, h = spec.height;
  const int ox = (base.width() - w) / 2;
  const int oy = (base.height() - h) / 2;
  const int margin = static_cast<int>(std::ceil(spec.rho)) + 1;
  if (ox < margin || oy < margin) {
    fail(ErrorCode::kSpecInfeasible, "base image must exceed the crop by rho + 1 on every side");
  }

  // Ground truth from four perturbed corners.
  Homography gt;
  {
    CounterRng rng = stream(spec, sample_index, kCorners);
    const double hx = center_offset(w), hy = center_offset(h);
    const std::array<Point2, 4> corners{{{-hx, -hy}, {hx, -hy}, {hx, hy}, {-hx, hy}}};
    std::array<PointPair, 4> pairs{};
    bool moved = false;
    for (std::size_t c = 0; c < 4; ++c) {
      const double dx = rng.uniform(-spec.rho, spec.rho);
      const double dy = rng.uniform(-spec.rho, spec.rho);
      moved = moved || dx != 0.0 || dy != 0.0;
      pairs[c] = {corners[c], {corners[c].x + dx, corners[c].y + dy}};
    }
    if (moved) gt = dlt(pairs);
  }
  const Homography gt_inv = invert(gt);

  std::vector<OutlierBlock> blocks;
  if (spec.outlier) {
    CounterRng rng = stream(spec, sample_index, kOutliers);
    const double side = std::sqrt(spec.outlier->area_fraction);
    const int bw = std::max(1, static_cast<int>(std::lround(side * w)));
    const int bh = std::max(1, static_cast<int>(std::lround(side * h)));
    if (bw > w || bh > h) fail(ErrorCode::kSpecInfeasible, "outlier block does not fit");
    for (int b = 0; b < spec.outlier->count; ++b) {
      OutlierBlock blk;
      blk.width = bw;
      blk.height = bh;
      blk.x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - bw + 1)));
      blk.y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - bh + 1)));
      blk.shift_x = spec.outlier->shift_x;
      blk.shift_y = spec.outlier->shift_y;
      blocks.push_back(blk);
    }
  }

  std::vector<double> pa(static_cast<std::size_t>(w) * h), pb(pa.size());
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * w + j;
      pa[k] = base.at(i + oy, j + ox);
      const Point2 p{centered_x(j, w), centered_y(i, h)};
      Point2 src = apply(gt_inv, p);
      for (const auto& b : blocks) {
        if (b.contains(i, j)) {
          src.x += b.shift_x;
          src.y += b.shift_y;
          break;
        }
      }
      pb[k] = sample_base(base, to_base(src, w, h, ox, oy));
    }
  }

  {
    CounterRng photo = stream(spec, sample_index, kPhotometric);
    const double gain = photo.uniform(spec.gain_min, spec.gain_max);
    const double bias = photo.uniform(spec.bias_min, spec.bias_max);
    CounterRng noise = stream(spec, sample_index, kNoise);
    for (double& v : pb) {
      double x = gain * v + bias;
      if (spec.noise_sigma > 0.0) x += spec.noise_sigma * noise.normal();
      v = std::clamp(x, 0.0, 1.0);
    }
  }

  BenchSample s{GrayImage(w, h, std::move(pa)), GrayImage(w, h, std::move(pb)), gt, {}, blocks};

  // Six labeled pairs on a jittered 3 x 2 layout, kept clear of outlier blocks
  // and inside both images.
  CounterRng rng = stream(spec, sample_index, kPoints);
  const std::array<double, 3> us{-0.8, 0.0, 0.8};
  const std::array<double, 2> vs{-0.8, 0.8};
  for (int slot = 0; slot < kBenchPointPairs; ++slot) {
    bool placed = false;
    for (int attempt = 0; attempt < 256 && !placed; ++attempt) {
      double u, v;
      if (attempt < 32) {
        u = us[slot % 3] + rng.uniform(-0.1, 0.1);
        v = vs[slot / 3] + rng.uniform(-0.1, 0.1);
      } else {
        u = rng.uniform(-0.85, 0.85);
        v = rng.uniform(-0.85, 0.85);
      }
      const Point2 src{u * center_offset(w), v * center_offset(h)};
      const Point2 dst = apply(gt, src);
      if (!inside(dst, w, h) || near_outlier(blocks, dst, w, h)) continue;
      s.gt_points[static_cast<std::size_t>(slot)] = {src, dst};
      placed = true;
    }
    if (!placed) fail(ErrorCode::kSpecInfeasible, "no room for labeled points outside outliers");
  }
  return s;
}

BenchSample gen_sample(const BenchSpec& spec, std::uint64_t sample_index) {
  return gen_pair(default_base(spec, sample_index), spec, sample_index);
}

FlowField ground_truth_backward_flow(const BenchSample& s) {
  const int w = s.i_b.width(), h = s.i_b.height();
  const Homography inv = invert(s.gt);
  const std::size_t n = s.i_b.pixel_count();
  std::vector<double> data(2 * n);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const Point2 p{centered_x(j, w), centered_y(i, h)};
      Point2 q = apply(inv, p);
      for (const auto& b : s.outliers) {
        if (b.contains(i, j)) {
          q.x += b.shift_x;
          q.y += b.shift_y;
          break;
        }
      }
      const std::size_t k = static_cast<std::size_t>(i) * w + j;
      data[k] = q.x - p.x;
      data[n + k] = q.y - p.y;
    }
  }
  return FlowField(w, h, std::move(data));
}

std::vector<double> point_errors(const Homography& h_est, std::span<const PointPair> gt_points) {
  std::vector<double> out;
  out.reserve(gt_points.size());
  for (const auto& pp : gt_points) {
    const Point2 q = apply(h_est, pp.src);
    out.push_back(std::hypot(q.x - pp.dst.x, q.y - pp.dst.y));
  }
  return out;
}

double point_matching_error(const Homography& h_est, std::span<const PointPair> gt_points) {
  if (gt_points.empty()) fail(ErrorCode::kInvalidArgument, "no ground-truth points");
  const auto e = point_errors(h_est, gt_points);
  return std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size());
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int k = 1; k <= 30; ++k) t.push_back(k / 10.0);
  return t;
}

std::vector<std::pair<double, double>> robustness_curve(std::span<const double> errors,
                                                        std::span<const double> thresholds) {
  std::vector<std::pair<double, double>> curve;
  curve.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto below = std::count_if(errors.begin(), errors.end(), [t](double e) { return e < t; });
    curve.emplace_back(t, errors.empty() ? 0.0
                                         : static_cast<double>(below) /
                                               static_cast<double>(errors.size()));
  }
  return curve;
}

std::string to_string(Method m) {
  switch (m) {
    case Method::kIdentity: return "identity";
    case Method::kFitRobustGtFlow: return "fit_robust";
    case Method::kAlign: return "align";
    case Method::kAlignNormalized: return "align_normalized";
  }
  return "identity";
}

Method parse_method(const std::string& name) {
  for (auto m : {Method::kIdentity, Method::kFitRobustGtFlow, Method::kAlign,
                 Method::kAlignNormalized}) {
    if (to_string(m) == name) return m;
  }
  fail(ErrorCode::kInvalidArgument, "unknown method '" + name + "'");
}

SampleResult evaluate_sample(const BenchSample& s, Method method, const std::string& spec_id,
                             std::uint64_t sample_idx) {
  SampleResult r;
  r.spec_id = spec_id;
  r.sample_idx = sample_idx;
  r.method = method;
  const int w = s.i_a.width(), h = s.i_a.height();
  try {
    switch (method) {
      case Method::kIdentity:
        r.estimate = Homography::identity();
        r.valid_fraction = 1.0;
        break;
      case Method::kFitRobustGtFlow: {
        const auto basis = shared_basis(w, h);
        RobustConfig cfg;
        cfg.loss = RobustLoss::kWelsch;
        const RobustFit fit = fit_robust(*basis, ground_truth_backward_flow(s), cfg);
        const FlowField flow = synthesize(*basis, fit.weights);
        r.estimate = invert(flow_to_homography(flow));
        r.valid_fraction = warp_mask(flow).valid_fraction();
        if (!fit.converged) r.status = "nonconverged";
        break;
      }
      case Method::kAlign:
      case Method::kAlignNormalized: {
        const auto basis = shared_basis(w, h);
        AlignConfig cfg;
        if (method == Method::kAlignNormalized) cfg.mode = PhotometricMode::kNormalized;
        cfg.pyramid_levels = std::min(cfg.pyramid_levels, max_pyramid_levels(w, h));
        const AlignResult ar = align_direct(s.i_a, s.i_b, *basis, cfg);
        r.estimate = ar.homography;
        r.valid_fraction = ar.valid_fraction;
        if (!ar.converged) r.status = "nonconverged";
        break;
      }
    }
    r.point_errors = point_errors(r.estimate, s.gt_points);
    r.mean_error_px = std::accumulate(r.point_errors.begin(), r.point_errors.end(), 0.0) /
                      static_cast<double>(r.point_errors.size());
  } catch (const Error& e) {
    r.status = "error:" + std::string(to_string(e.code()));
    r.mean_error_px = std::nan("");
    r.valid_fraction = 0.0;
    r.point_errors.clear();
  }
  return r;
}

SuiteReport evaluate_suite(std::span<const std::pair<std::string, std::uint64_t>> keys,
                           const std::function<BenchSample(std::size_t)>& load, Method method,
                           int jobs) {
  SuiteReport report;
  report.rows.resize(keys.size());
  report.baseline.resize(keys.size());
  auto work = [&](std::size_t k) {
    const auto& [spec_id, idx] = keys[k];
    try {
      const BenchSample s = load(k);
      report.rows[k] = evaluate_sample(s, method, spec_id, idx);
      report.baseline[k] = evaluate_sample(s, Method::kIdentity, spec_id, idx);
    } catch (const Error& e) {
      for (auto* row : {&report.rows[k], &report.baseline[k]}) {
        row->spec_id = spec_id;
        row->sample_idx = idx;
        row->status = "error:" + std::string(to_string(e.code()));
        row->mean_error_px = std::nan("");
      }
      report.rows[k].method = method;
    }
  };
  const int threads = std::max(1, jobs);
  if (threads == 1) {
    for (std::size_t k = 0; k < keys.size(); ++k) work(k);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t k = static_cast<std::size_t>(t); k < keys.size();
             k += static_cast<std::size_t>(threads)) {
          work(k);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  std::vector<double> errors;
  for (const auto& r : report.rows) errors.insert(errors.end(), r.point_errors.begin(), r.point_errors.end());
  report.curve = robustness_curve(errors, default_thresholds());
  return report;
}

SuiteReport run_suite(std::span<const BenchSpec> specs, Method method, int jobs) {
  std::vector<std::pair<std::string, std::uint64_t>> keys;
  std::vector<const BenchSpec*> owner;
  for (const auto& spec : specs) {
    spec.validate();
    for (int i = 0; i < spec.count; ++i) {
      keys.emplace_back(spec.id, static_cast<std::uint64_t>(i));
      owner.push_back(&spec);
    }
  }
  return evaluate_suite(
      keys, [&](std::size_t k) { return gen_sample(*owner[k], keys[k].second); }, method, jobs);
}

std::string format_results_csv(const SuiteReport& report) {
  std::string out = "spec_id,sample_idx,method,mean_error_px,valid_fraction,status\n";
  auto row = [&](const std::string& id, const std::string& idx, const std::string& method,
                 double err, double valid, const std::string& status) {
    out += id + "," + idx + "," + method + "," + fmt(err) + "," + fmt(valid) + "," + status + "\n";
  };
  auto summary = [&](const std::vector<SampleResult>& rows, std::size_t begin, std::size_t end,
                     const std::string& method) {
    double err = 0.0, valid = 0.0;
    std::size_t ok = 0;
    for (std::size_t k = begin; k < end; ++k) {
      if (rows[k].status.rfind("error:", 0) == 0) continue;
      err += rows[k].mean_error_px;
      valid += rows[k].valid_fraction;
      ++ok;
    }
    const double n = static_cast<double>(ok);
    row(rows[begin].spec_id, "mean", method, ok ? err / n : std::nan(""), ok ? valid / n : 0.0,
        std::to_string(ok) + "/" + std::to_string(end - begin));
  };
  std::size_t begin = 0;
  while (begin < report.rows.size()) {
    std::size_t end = begin;
    while (end < report.rows.size() && report.rows[end].spec_id == report.rows[begin].spec_id) {
      const auto& r = report.rows[end];
      row(r.spec_id, std::to_string(r.sample_idx), to_string(r.method), r.mean_error_px,
          r.valid_fraction, r.status);
      ++end;
    }
    summary(report.rows, begin, end, to_string(report.rows[begin].method));
    if (report.rows[begin].method != Method::kIdentity) {
      summary(report.baseline, begin, end, "identity");
    }
    begin = end;
  }
  return out;
}

std::string format_curve_csv(std::span<const std::pair<double, double>> curve) {
  std::string out = "threshold,fraction\n";
  for (const auto& [t, f] : curve) out += fmt(t) + "," + fmt(f) + "\n";
  return out;
}

void write_sample_dir(const std::filesystem::path& dir, const BenchSample& s) {
  std::filesystem::create_directories(dir);
  io::write_pgm(dir / "a.pgm", s.i_a);
  io::write_pgm(dir / "b.pgm", s.i_b);
  json gt;
  json rows = json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({s.gt(r, 0), s.gt(r, 1), s.gt(r, 2)});
  gt["matrix"] = rows;
  gt["width"] = s.i_a.width();
  gt["height"] = s.i_a.height();
  json blocks = json::array();
  for (const auto& b : s.outliers) {
    blocks.push_back({{"x0", b.x0}, {"y0", b.y0}, {"width", b.width}, {"height", b.height},
                      {"shift", {b.shift_x, b.shift_y}}});
  }
  gt["outliers"] = blocks;
  io::write_text(dir / "gt.json", gt.dump(2) + "\n");
  json pts = json::array();
  for (const auto& pp : s.gt_points) pts.push_back({{"src", point_json(pp.src)}, {"dst", point_json(pp.dst)}});
  io::write_text(dir / "points.json", json{{"pairs", pts}}.dump(2) + "\n");
}

BenchSample read_sample_dir(const std::filesystem::path& dir) {
  GrayImage a = io::read_pgm(dir / "a.pgm");
  GrayImage b = io::read_pgm(dir / "b.pgm");
  if (a.width() != b.width() || a.height() != b.height()) {
    fail(ErrorCode::kDimensionMismatch, "a.pgm and b.pgm differ in size");
  }
  try {
    const json gt = json::parse(io::read_text(dir / "gt.json"));
    BenchSample s{std::move(a), std::move(b), io::parse_homography(gt.dump()), {}, {}};
    for (const auto& jb : gt.value("outliers", json::array())) {
      OutlierBlock blk;
      blk.x0 = jb.at("x0").get<int>();
      blk.y0 = jb.at("y0").get<int>();
      blk.width = jb.at("width").get<int>();
      blk.height = jb.at("height").get<int>();
      blk.shift_x = jb.at("shift").at(0).get<double>();
      blk.shift_y = jb.at("shift").at(1).get<double>();
      s.outliers.push_back(blk);
    }
    const json pts = json::parse(io::read_text(dir / "points.json")).at("pairs");
    if (pts.size() != kBenchPointPairs) fail(ErrorCode::kBadHeader, "points.json needs 6 pairs");
    for (std::size_t k = 0; k < kBenchPointPairs; ++k) {
      s.gt_points[k] = {point_from(pts.at(k).at("src")), point_from(pts.at(k).at("dst"))};
    }
    return s;
  } catch (const json::exception& e) {
    fail(ErrorCode::kBadHeader, "sample " + dir.string() + ": " + e.what());
  }
}

std::vector<BenchSpec> parse_bench_specs(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("spec JSON: ") + e.what());
  }
  std::vector<BenchSpec> specs;
  try {
    if (j.is_object() && j.contains("specs")) {
      require_keys(j, {"specs"}, "spec document");
      std::size_t pos = 0;
      for (const auto& s : j.at("specs")) specs.push_back(spec_from_json(s, pos++));
    } else if (j.is_object()) {
      specs.push_back(spec_from_json(j, 0));
    } else {
      fail(ErrorCode::kInvalidArgument, "spec JSON must be an object");
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("spec JSON: ") + e.what());
  }
  std::set<std::string> ids;
  for (const auto& s : specs) {
    if (!ids.insert(s.id).second) fail(ErrorCode::kInvalidArgument, "duplicate spec id " + s.id);
  }
  return specs;
}

}  // namespace hflow
