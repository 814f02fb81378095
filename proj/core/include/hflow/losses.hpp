#pragma once

#include <string_view>
#include <utility>

#include "hflow/geometry.hpp"
#include "hflow/subspace.hpp"

namespace hflow {

inline constexpr double kDefaultFilWeight = 1.0;             // lambda
inline constexpr double kDefaultInverseConsistencyWeight = 0.001;  // mu

// Fixed (non-learned) feature extractors. Borders replicate the edge pixel.
enum class FeatureTransform {
  kIdentity,           // C = 1
  kGradientMagnitude,  // C = 1, central differences
  kBoxMean3,           // C = 1, 3x3 mean
  kStack,              // C = 3: identity, gradient magnitude, box mean
};

std::string_view to_string(FeatureTransform t);
FeatureTransform parse_feature_transform(std::string_view name);

FeatureMap extract_features(const GrayImage& img, FeatureTransform t);

/// Per-channel backward bilinear warp of a feature map; zero where invalid.
std::pair<FeatureMap, ValidityMask> warp_features(const FeatureMap& f, const FlowField& flow);

/// mean_valid |warp(f_a) - f_b| - mean_valid |f_a - f_b|, both over the valid
/// pixels of the warp and all channels. Throws EmptyMask.
double triplet_loss(const FeatureMap& f_a, const FeatureMap& f_b, const FlowField& flow);

/// Masked mean |warp(f(I)) - f(warp(I))|. Throws EmptyMask.
double fil_loss(const GrayImage& img, FeatureTransform f, const FlowField& flow);

/// Mean over pixels of ||flow_ab(p) + flow_ba(p)||^2 (pixels^2).
double inverse_consistency(const FlowField& flow_ab, const FlowField& flow_ba);

struct LossReport {
  double triplet_ab = 0.0;
  double triplet_ba = 0.0;
  double triplet = 0.0;  // triplet_ab + triplet_ba
  double fil_ab = 0.0;
  double fil_ba = 0.0;
  double inverse_consistency = 0.0;
  double lambda = kDefaultFilWeight;
  double mu = kDefaultInverseConsistencyWeight;
  double total = 0.0;
  double valid_fraction = 0.0;  // of the a -> b warp
};

/// Recomputes total from the report's parts; this is the exact expression
/// total_objective() uses.
double recompose_total(const LossReport& r);

/// Symmetric objective. flow_ab warps a onto b's grid and flow_ba warps b onto
/// a's grid (both backward flows).
LossReport total_objective(const GrayImage& i_a, const GrayImage& i_b, FeatureTransform f,
                           const FlowField& flow_ab, const FlowField& flow_ba,
                           double lambda = kDefaultFilWeight,
                           double mu = kDefaultInverseConsistencyWeight);

}  // namespace hflow
