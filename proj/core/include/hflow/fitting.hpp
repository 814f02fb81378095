#pragma once

#include <span>
#include <vector>

#include "hflow/bases.hpp"
#include "hflow/geometry.hpp"

namespace hflow {

struct Correspondence {
  Point2 src;
  Point2 dst;
  double weight = 1.0;
};

struct SparseFit {
  BasisWeights weights;
  double rms_residual = 0.0;  // per-coordinate RMS in pixels over weight > 0 observations
};

/// Weighted least squares: min sum_i w_i ||B(src_i) alpha - (dst_i - src_i)||^2
/// with B the pixel-unit basis Jacobian. Needs >= 4 correspondences and a
/// normal matrix with condition number <= 1e12 (UnderdeterminedSystem).
SparseFit fit_sparse(const BasisSet& b, std::span<const Correspondence> corrs);

enum class RobustLoss { kHuber, kWelsch };

struct RobustConfig {
  RobustLoss loss = RobustLoss::kHuber;
  double scale = 1.0;  // pixels
  int max_iters = 50;
  double tol = 1e-6;   // on the max per-observation weight change

  void validate() const;
};

struct RobustFit {
  BasisWeights weights;
  std::vector<double> observation_weights;  // robust weight per observation, in [0, 1]
  double rms_residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

// IRLS. Each iteration solves the weighted problem, then reweights every
// observation from its residual norm r: Huber min(1, scale / r), Welsch
// exp(-(r / scale)^2). Welsch is redescending, so it is started from the
// converged Huber solution. When max_iters runs out the lowest-cost iterate is
// returned with converged == false.
RobustFit fit_robust(const BasisSet& b, std::span<const Correspondence> corrs,
                     const RobustConfig& cfg);

/// Dense variant: one observation per pixel, weights returned row-major.
RobustFit fit_robust(const BasisSet& b, const FlowField& flow, const RobustConfig& cfg);

enum class PhotometricMode {
  kMeanSquared,  // masked mean of squared intensity differences
  kNormalized,   // same, after zero-mean / unit-variance normalization of each image
};

struct AlignConfig {
  int pyramid_levels = 4;
  int gn_iters = 30;         // per level
  double step_tol = 1e-6;    // max |delta alpha| that counts as converged
  BasisWeights initial{};    // full-resolution weights
  PhotometricMode mode = PhotometricMode::kMeanSquared;

  void validate(int width, int height) const;
};

/// floor(log2(min(W, H))) - 2, the deepest pyramid an AlignConfig may request.
int max_pyramid_levels(int width, int height);

struct AlignResult {
  BasisWeights weights;          // full resolution; synthesize() gives the backward flow b -> a
  Homography homography;         // source (a) to target (b)
  double initial_error = 0.0;
  double photometric_error = 0.0;
  double valid_fraction = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Coarse-to-fine forward-additive Gauss-Newton over the basis weights. The
/// warped image a(p + flow(p)) is compared against b(p) over valid pixels;
/// steps are halved (at most 8 times) until the objective decreases. Throws
/// NoTexture when the mean squared gradient of a is below 1e-6.
AlignResult align_direct(const GrayImage& a, const GrayImage& b, const BasisSet& basis,
                         const AlignConfig& cfg);

/// Masked mean squared photometric error of a warped by synthesize(basis, w).
double photometric_error(const GrayImage& a, const GrayImage& b, const BasisSet& basis,
                         const BasisWeights& w);

struct GradientCheck {
  BasisVector analytic;
  BasisVector numeric;
  double max_relative_error = 0.0;
};

/// Compares the analytic objective gradient (2/n) J^T r against central
/// differences with step 1e-4 per weight. The pixel set is frozen at the
/// samples lying at least one pixel inside the source at w, so both gradients
/// see the same objective. Error = max_k |analytic_k - numeric_k| / max(|analytic|_inf,
/// |numeric|_inf), or 0 when both gradients vanish.
GradientCheck gn_gradient_check(const GrayImage& a, const GrayImage& b, const BasisSet& basis,
                                const BasisWeights& w);

}  // namespace hflow
