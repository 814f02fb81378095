#include "hflow/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "hflow/error.hpp"

namespace hflow {

namespace {

constexpr double kMaxCondition = 1e12;
constexpr double kMinGradientEnergy = 1e-6;
constexpr int kMaxHalvings = 8;
constexpr double kFiniteDifferenceStep = 1e-4;

using Normal = Eigen::Matrix<double, kNumBases, kNumBases>;

// Linear observations J_i alpha ~= t_i in pixel units.
struct Observations {
  std::vector<BasisRows> jac;
  std::vector<Eigen::Vector2d> target;
  std::vector<double> prior;

  std::size_t size() const { return jac.size(); }
};

Observations from_correspondences(const BasisSet& b, std::span<const Correspondence> corrs) {
  Observations obs;
  obs.jac.reserve(corrs.size());
  for (const auto& c : corrs) {
    if (!std::isfinite(c.src.x) || !std::isfinite(c.src.y) || !std::isfinite(c.dst.x) ||
        !std::isfinite(c.dst.y) || !(c.weight >= 0.0)) {
      fail(ErrorCode::kInvalidArgument, "correspondence must be finite with weight >= 0");
    }
    obs.jac.push_back(pixel_jacobian(b, c.src));
    obs.target.emplace_back(c.dst.x - c.src.x, c.dst.y - c.src.y);
    obs.prior.push_back(c.weight);
  }
  return obs;
}

Observations from_flow(const BasisSet& b, const FlowField& f) {
  if (f.width() != b.width() || f.height() != b.height()) {
    fail(ErrorCode::kDimensionMismatch, "flow size does not match the basis grid");
  }
  const std::size_t n = b.pixel_count();
  const auto& q = b.q();
  Observations obs;
  obs.jac.resize(n);
  obs.target.resize(n);
  obs.prior.assign(n, 1.0);
  const auto dx = f.dx_plane();
  const auto dy = f.dy_plane();
  for (std::size_t k = 0; k < n; ++k) {
    obs.jac[k].row(0) = q.row(static_cast<Eigen::Index>(k)) * b.scale_x();
    obs.jac[k].row(1) = q.row(static_cast<Eigen::Index>(n + k)) * b.scale_y();
    obs.target[k] = {dx[k], dy[k]};
  }
  return obs;
}

BasisVector solve_weighted(const Observations& obs, std::span<const double> w) {
  std::size_t active = 0;
  Normal normal = Normal::Zero();
  BasisVector rhs = BasisVector::Zero();
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (w[i] <= 0.0) continue;
    ++active;
    normal.noalias() += w[i] * obs.jac[i].transpose() * obs.jac[i];
    rhs.noalias() += w[i] * obs.jac[i].transpose() * obs.target[i];
  }
  if (active < 4) {
    fail(ErrorCode::kUnderdeterminedSystem,
         "need at least 4 weighted observations, got " + std::to_string(active));
  }
  const Eigen::SelfAdjointEigenSolver<Normal> eig(normal, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kMaxCondition) {
    fail(ErrorCode::kUnderdeterminedSystem, "normal matrix condition number exceeds 1e12");
  }
  return normal.ldlt().solve(rhs);
}

std::vector<double> residual_norms(const Observations& obs, const BasisVector& alpha) {
  std::vector<double> r(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) r[i] = (obs.jac[i] * alpha - obs.target[i]).norm();
  return r;
}

double rms_over(std::span<const double> residuals, std::span<const double> w) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    if (w[i] <= 0.0) continue;
    sum += residuals[i] * residuals[i];
    ++count;
  }
  return count == 0 ? 0.0 : std::sqrt(sum / (2.0 * static_cast<double>(count)));
}

double robust_weight(RobustLoss loss, double scale, double r) {
  switch (loss) {
    case RobustLoss::kHuber: return r <= scale ? 1.0 : scale / r;
    case RobustLoss::kWelsch: return std::exp(-(r / scale) * (r / scale));
  }
  return 1.0;
}

double robust_cost(RobustLoss loss, double scale, double r) {
  switch (loss) {
    case RobustLoss::kHuber: return r <= scale ? 0.5 * r * r : scale * (r - 0.5 * scale);
    case RobustLoss::kWelsch:
      return 0.5 * scale * scale * (1.0 - std::exp(-(r / scale) * (r / scale)));
  }
  return 0.5 * r * r;
}

// One IRLS stage for a single loss, starting from the given robust weights.
struct Stage {
  BasisVector alpha;
  std::vector<double> robust;
  int iterations = 0;
  bool converged = false;
};

Stage irls(const Observations& obs, RobustLoss loss, const RobustConfig& cfg,
           std::vector<double> robust) {
  Stage best;
  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<double> w(obs.size());
  for (int it = 1; it <= cfg.max_iters; ++it) {
    for (std::size_t i = 0; i < obs.size(); ++i) w[i] = obs.prior[i] * robust[i];
    const BasisVector alpha = solve_weighted(obs, w);
    const auto r = residual_norms(obs, alpha);

    double cost = 0.0;
    double change = 0.0;
    std::vector<double> next(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
      next[i] = robust_weight(loss, cfg.scale, r[i]);
      change = std::max(change, std::abs(next[i] - robust[i]));
      cost += obs.prior[i] * robust_cost(loss, cfg.scale, r[i]);
    }
    robust = std::move(next);
    if (cost <= best_cost) {
      best_cost = cost;
      best.alpha = alpha;
      best.robust = robust;
    }
    best.iterations = it;
    if (change < cfg.tol) {
      best.alpha = alpha;
      best.robust = robust;
      best.converged = true;
      break;
    }
  }
  return best;
}

RobustFit run_robust(const Observations& obs, const RobustConfig& cfg) {
  cfg.validate();
  if (obs.size() < 4) {
    fail(ErrorCode::kUnderdeterminedSystem, "need at least 4 observations");
  }
  Stage stage = irls(obs, RobustLoss::kHuber, cfg, std::vector<double>(obs.size(), 1.0));
  int iterations = stage.iterations;
  if (cfg.loss == RobustLoss::kWelsch) {
    std::vector<double> start(obs.size());
    const auto r = residual_norms(obs, stage.alpha);
    for (std::size_t i = 0; i < obs.size(); ++i) {
      start[i] = robust_weight(RobustLoss::kWelsch, cfg.scale, r[i]);
    }
    stage = irls(obs, RobustLoss::kWelsch, cfg, std::move(start));
    iterations += stage.iterations;
  }
  RobustFit fit;
  fit.weights = from_vector(stage.alpha);
  fit.observation_weights = std::move(stage.robust);
  fit.iterations = iterations;
  fit.converged = stage.converged;
  fit.rms_residual = rms_over(residual_norms(obs, stage.alpha), obs.prior);
  return fit;
}

// ---------------------------------------------------------------------------
// Direct alignment

struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> v;

  double at(int row, int col) const { return v[static_cast<std::size_t>(row) * width + col]; }
};

Plane to_plane(const GrayImage& img) {
  return {img.width(), img.height(), {img.pixels().begin(), img.pixels().end()}};
}

Plane downsample(const Plane& p) {
  Plane out{p.width / 2, p.height / 2, {}};
  out.v.resize(static_cast<std::size_t>(out.width) * out.height);
  for (int i = 0; i < out.height; ++i) {
    for (int j = 0; j < out.width; ++j) {
      out.v[static_cast<std::size_t>(i) * out.width + j] =
          0.25 * (p.at(2 * i, 2 * j) + p.at(2 * i, 2 * j + 1) + p.at(2 * i + 1, 2 * j) +
                  p.at(2 * i + 1, 2 * j + 1));
    }
  }
  return out;
}

double gradient_energy(const Plane& p) {
  double sum = 0.0;
  for (int i = 0; i < p.height; ++i) {
    for (int j = 0; j < p.width; ++j) {
      const double gx =
          0.5 * (p.at(i, std::min(j + 1, p.width - 1)) - p.at(i, std::max(j - 1, 0)));
      const double gy =
          0.5 * (p.at(std::min(i + 1, p.height - 1), j) - p.at(std::max(i - 1, 0), j));
      sum += gx * gx + gy * gy;
    }
  }
  return sum / static_cast<double>(p.v.size());
}

void standardize(Plane& p) {
  double mean = 0.0;
  for (double x : p.v) mean += x;
  mean /= static_cast<double>(p.v.size());
  double var = 0.0;
  for (double x : p.v) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(p.v.size()));
  if (!(sd > 1e-12)) fail(ErrorCode::kNoTexture, "image has zero intensity variance");
  for (double& x : p.v) x = (x - mean) / sd;
}

struct Linearization {
  Normal normal = Normal::Zero();
  BasisVector rhs = BasisVector::Zero();  // J^T r
  double sum_sq = 0.0;
  std::size_t count = 0;

  double error() const {
    return count == 0 ? std::numeric_limits<double>::infinity()
                      : sum_sq / static_cast<double>(count);
  }
};

// Pixel sets: when `frozen` is given only those pixels contribute (and must
// stay valid); otherwise every pixel whose sample is valid contributes.
Linearization linearize(const Plane& a, const Plane& b, const BasisSet& basis,
                        const BasisVector& alpha, bool with_jacobian,
                        const std::vector<std::uint8_t>* frozen = nullptr) {
  const int w = basis.width(), h = basis.height();
  const std::size_t n = basis.pixel_count();
  const auto& q = basis.q();
  const Eigen::VectorXd flow = q * alpha;
  const double sx = basis.scale_x(), sy = basis.scale_y();
  Linearization lin;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * w + j;
      if (frozen && !(*frozen)[k]) continue;
      const auto kk = static_cast<Eigen::Index>(k);
      const auto tap = bilinear_tap(j + sx * flow(kk), i + sy * flow(kk + static_cast<Eigen::Index>(n)),
                                    w, h);
      if (!tap) continue;
      const double r = tap->sample(a.v, w) - b.v[k];
      lin.sum_sq += r * r;
      ++lin.count;
      if (!with_jacobian) continue;
      const double a00 = a.at(tap->y0, tap->x0), a01 = a.at(tap->y0, tap->x1);
      const double a10 = a.at(tap->y1, tap->x0), a11 = a.at(tap->y1, tap->x1);
      const double gx = (1.0 - tap->fy) * (a01 - a00) + tap->fy * (a11 - a10);
      const double gy = (1.0 - tap->fx) * (a10 - a00) + tap->fx * (a11 - a01);
      const Eigen::Matrix<double, 1, kNumBases> jrow =
          (gx * sx) * q.row(kk) + (gy * sy) * q.row(kk + static_cast<Eigen::Index>(n));
      lin.normal.noalias() += jrow.transpose() * jrow;
      lin.rhs.noalias() += jrow.transpose() * r;
    }
  }
  return lin;
}

// Re-expresses a flow in the span of `from` on the grid of `to`, where a point
// x_from corresponds to x_to = scale * x_from + offset and flows scale alike.
// The homography tangent span is closed under this map, so a least-squares fit
// on a 17 x 17 sample grid is exact up to rounding.
BasisVector transfer(const BasisSet& from, const BasisVector& alpha, const BasisSet& to,
                     double scale, Point2 offset) {
  constexpr int kGrid = 17;
  Observations obs;
  for (int a = 0; a < kGrid; ++a) {
    const double y = centered_y(0, to.height()) + (to.height() - 1) * a / double(kGrid - 1);
    for (int c = 0; c < kGrid; ++c) {
      const double x = centered_x(0, to.width()) + (to.width() - 1) * c / double(kGrid - 1);
      const Point2 src{(x - offset.x) / scale, (y - offset.y) / scale};
      const Eigen::Vector2d flow = pixel_jacobian(from, src) * alpha;
      obs.jac.push_back(pixel_jacobian(to, {x, y}));
      obs.target.push_back(scale * flow);
      obs.prior.push_back(1.0);
    }
  }
  return solve_weighted(obs, obs.prior);
}

// Offset of the fine grid relative to twice the coarse grid (2x2 box pyramid).
Point2 pyramid_offset(const BasisSet& coarse, const BasisSet& fine) {
  return {0.5 * (2 * coarse.width() - fine.width()), 0.5 * (2 * coarse.height() - fine.height())};
}

struct LevelResult {
  BasisVector alpha;
  int iterations = 0;
  bool converged = false;
};

LevelResult gauss_newton(const Plane& a, const Plane& b, const BasisSet& basis,
                         BasisVector alpha, const AlignConfig& cfg) {
  LevelResult out;
  Linearization lin = linearize(a, b, basis, alpha, true);
  double err = lin.error();
  for (int it = 0; it < cfg.gn_iters; ++it) {
    if (lin.count == 0) break;
    Normal normal = lin.normal;
    const double ridge = 1e-12 * normal.trace() / kNumBases;
    if (!(ridge > 0.0)) {
      out.converged = true;
      break;
    }
    normal.diagonal().array() += ridge;
    const BasisVector delta = -normal.ldlt().solve(lin.rhs);

    double t = 1.0;
    bool accepted = false;
    BasisVector candidate;
    double cand_err = err;
    for (int halving = 0; halving <= kMaxHalvings; ++halving, t *= 0.5) {
      candidate = alpha + t * delta;
      cand_err = linearize(a, b, basis, candidate, false).error();
      if (cand_err < err) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      out.converged = true;
      break;
    }
    alpha = candidate;
    err = cand_err;
    ++out.iterations;
    if ((t * delta).cwiseAbs().maxCoeff() < cfg.step_tol) {
      out.converged = true;
      break;
    }
    lin = linearize(a, b, basis, alpha, true);
  }
  out.alpha = alpha;
  return out;
}

void check_same_grid(const GrayImage& a, const GrayImage& b, const BasisSet& basis) {
  if (a.width() != b.width() || a.height() != b.height() || a.width() != basis.width() ||
      a.height() != basis.height()) {
    fail(ErrorCode::kDimensionMismatch, "images and basis grid must have the same size");
  }
}

}  // namespace

void RobustConfig::validate() const {
  if (!(scale > 0.0) || max_iters < 1 || !(tol > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "robust config needs scale > 0, max_iters >= 1, tol > 0");
  }
}

int max_pyramid_levels(int width, int height) {
  const int m = std::min(width, height);
  int log2 = 0;
  while ((2 << log2) <= m) ++log2;
  return log2 - 2;
}

void AlignConfig::validate(int width, int height) const {
  const int max_levels = max_pyramid_levels(width, height);
  if (pyramid_levels < 1 || pyramid_levels > max_levels) {
    fail(ErrorCode::kInvalidArgument, "pyramid_levels must be in [1, " +
                                          std::to_string(max_levels) + "] for this image size");
  }
  if (gn_iters < 1 || !(step_tol > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "gn_iters must be >= 1 and step_tol > 0");
  }
}

SparseFit fit_sparse(const BasisSet& b, std::span<const Correspondence> corrs) {
  if (corrs.size() < 4) {
    fail(ErrorCode::kUnderdeterminedSystem,
         "need at least 4 correspondences, got " + std::to_string(corrs.size()));
  }
  const Observations obs = from_correspondences(b, corrs);
  const BasisVector alpha = solve_weighted(obs, obs.prior);
  return {from_vector(alpha), rms_over(residual_norms(obs, alpha), obs.prior)};
}

RobustFit fit_robust(const BasisSet& b, std::span<const Correspondence> corrs,
                     const RobustConfig& cfg) {
  if (corrs.size() < 4) {
    fail(ErrorCode::kUnderdeterminedSystem,
         "need at least 4 correspondences, got " + std::to_string(corrs.size()));
  }
  return run_robust(from_correspondences(b, corrs), cfg);
}

RobustFit fit_robust(const BasisSet& b, const FlowField& flow, const RobustConfig& cfg) {
  return run_robust(from_flow(b, flow), cfg);
}

double photometric_error(const GrayImage& a, const GrayImage& b, const BasisSet& basis,
                         const BasisWeights& w) {
  check_same_grid(a, b, basis);
  return linearize(to_plane(a), to_plane(b), basis, to_vector(w), false).error();
}

AlignResult align_direct(const GrayImage& a, const GrayImage& b, const BasisSet& basis,
                         const AlignConfig& cfg) {
  check_same_grid(a, b, basis);
  cfg.validate(a.width(), a.height());

  std::vector<Plane> pa{to_plane(a)}, pb{to_plane(b)};
  if (gradient_energy(pa[0]) < kMinGradientEnergy) {
    fail(ErrorCode::kNoTexture, "source image gradient energy is below 1e-6");
  }
  if (cfg.mode == PhotometricMode::kNormalized) {
    standardize(pa[0]);
    standardize(pb[0]);
  }
  std::vector<std::shared_ptr<const BasisSet>> bases{
      std::shared_ptr<const BasisSet>(&basis, [](const BasisSet*) {})};
  for (int l = 1; l < cfg.pyramid_levels; ++l) {
    pa.push_back(downsample(pa.back()));
    pb.push_back(downsample(pb.back()));
    bases.push_back(shared_basis(pa.back().width, pa.back().height));
  }

  const BasisVector initial = to_vector(cfg.initial);
  BasisVector alpha = initial;
  for (int l = 1; l < cfg.pyramid_levels; ++l) {
    const Point2 d = pyramid_offset(*bases[l], *bases[l - 1]);
    alpha = transfer(*bases[l - 1], alpha, *bases[l], 0.5, {-0.5 * d.x, -0.5 * d.y});
  }

  AlignResult result;
  for (int l = cfg.pyramid_levels - 1; l >= 0; --l) {
    const LevelResult lr = gauss_newton(pa[l], pb[l], *bases[l], alpha, cfg);
    alpha = lr.alpha;
    result.iterations += lr.iterations;
    if (l == 0) result.converged = lr.converged;
    if (l > 0) alpha = transfer(*bases[l], alpha, *bases[l - 1], 2.0,
                                pyramid_offset(*bases[l], *bases[l - 1]));
  }

  result.initial_error = linearize(pa[0], pb[0], basis, initial, false).error();
  result.photometric_error = linearize(pa[0], pb[0], basis, alpha, false).error();
  if (!(result.photometric_error <= result.initial_error)) {
    alpha = initial;
    result.photometric_error = result.initial_error;
  }
  result.weights = from_vector(alpha);
  const FlowField flow = synthesize(basis, result.weights);
  result.valid_fraction = warp_mask(flow).valid_fraction();
  result.homography = invert(flow_to_homography(flow));
  return result;
}

GradientCheck gn_gradient_check(const GrayImage& a, const GrayImage& b, const BasisSet& basis,
                                const BasisWeights& w) {
  check_same_grid(a, b, basis);
  const Plane pa = to_plane(a), pb = to_plane(b);
  const BasisVector alpha = to_vector(w);

  const FlowField flow = synthesize(basis, w);
  const int width = basis.width(), height = basis.height();
  std::vector<std::uint8_t> frozen(basis.pixel_count(), 0);
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      const double sx = j + flow.dx(i, j), sy = i + flow.dy(i, j);
      frozen[static_cast<std::size_t>(i) * width + j] =
          (sx >= 1.0 && sx <= width - 2.0 && sy >= 1.0 && sy <= height - 2.0) ? 1 : 0;
    }
  }

  GradientCheck check;
  const Linearization lin = linearize(pa, pb, basis, alpha, true, &frozen);
  if (lin.count == 0) fail(ErrorCode::kEmptyMask, "no interior samples at these weights");
  check.analytic = lin.rhs * (2.0 / static_cast<double>(lin.count));
  for (int k = 0; k < kNumBases; ++k) {
    BasisVector plus = alpha, minus = alpha;
    plus(k) += kFiniteDifferenceStep;
    minus(k) -= kFiniteDifferenceStep;
    const double ep = linearize(pa, pb, basis, plus, false, &frozen).error();
    const double em = linearize(pa, pb, basis, minus, false, &frozen).error();
    check.numeric(k) = (ep - em) / (2.0 * kFiniteDifferenceStep);
  }
  const double scale =
      std::max(check.analytic.cwiseAbs().maxCoeff(), check.numeric.cwiseAbs().maxCoeff());
  check.max_relative_error =
      scale == 0.0 ? 0.0 : (check.analytic - check.numeric).cwiseAbs().maxCoeff() / scale;
  return check;
}

}  // namespace hflow
