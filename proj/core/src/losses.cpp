#include "hflow/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hflow/error.hpp"

namespace hflow {

namespace {

void check_same(int w1, int h1, int w2, int h2, const char* what) {
  if (w1 != w2 || h1 != h2) {
    fail(ErrorCode::kDimensionMismatch, std::string(what) + ": sizes differ");
  }
}

std::vector<double> gradient_magnitude(const GrayImage& img) {
  const int w = img.width(), h = img.height();
  std::vector<double> out(img.pixel_count());
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double gx = 0.5 * (img.at(i, std::min(j + 1, w - 1)) - img.at(i, std::max(j - 1, 0)));
      const double gy = 0.5 * (img.at(std::min(i + 1, h - 1), j) - img.at(std::max(i - 1, 0), j));
      out[static_cast<std::size_t>(i) * w + j] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

std::vector<double> box_mean3(const GrayImage& img) {
  const int w = img.width(), h = img.height();
  std::vector<double> out(img.pixel_count());
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double sum = 0.0;
      for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          sum += img.at(std::clamp(i + di, 0, h - 1), std::clamp(j + dj, 0, w - 1));
        }
      }
      out[static_cast<std::size_t>(i) * w + j] = sum / 9.0;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(FeatureTransform t) {
  switch (t) {
    case FeatureTransform::kIdentity: return "identity";
    case FeatureTransform::kGradientMagnitude: return "gradient";
    case FeatureTransform::kBoxMean3: return "box3";
    case FeatureTransform::kStack: return "stack";
  }
  return "identity";
}

FeatureTransform parse_feature_transform(std::string_view name) {
  for (auto t : {FeatureTransform::kIdentity, FeatureTransform::kGradientMagnitude,
                 FeatureTransform::kBoxMean3, FeatureTransform::kStack}) {
    if (to_string(t) == name) return t;
  }
  fail(ErrorCode::kInvalidArgument, "unknown feature transform '" + std::string(name) + "'");
}

FeatureMap extract_features(const GrayImage& img, FeatureTransform t) {
  const int w = img.width(), h = img.height();
  switch (t) {
    case FeatureTransform::kIdentity:
      return FeatureMap(w, h, 1, {img.pixels().begin(), img.pixels().end()});
    case FeatureTransform::kGradientMagnitude:
      return FeatureMap(w, h, 1, gradient_magnitude(img));
    case FeatureTransform::kBoxMean3:
      return FeatureMap(w, h, 1, box_mean3(img));
    case FeatureTransform::kStack: {
      const auto g = gradient_magnitude(img);
      const auto b = box_mean3(img);
      std::vector<double> data(3 * img.pixel_count());
      for (std::size_t k = 0; k < img.pixel_count(); ++k) {
        data[3 * k] = img.pixels()[k];
        data[3 * k + 1] = g[k];
        data[3 * k + 2] = b[k];
      }
      return FeatureMap(w, h, 3, std::move(data));
    }
  }
  fail(ErrorCode::kInvalidArgument, "unknown feature transform");
}

std::pair<FeatureMap, ValidityMask> warp_features(const FeatureMap& f, const FlowField& flow) {
  check_same(f.width(), f.height(), flow.width(), flow.height(), "warp_features");
  const int w = f.width(), h = f.height(), c = f.channels();
  const auto stride = static_cast<std::size_t>(c);
  std::vector<double> out(f.data().size(), 0.0);
  std::vector<std::uint8_t> mask(f.pixel_count(), 0);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * w + j;
      if (auto tap = bilinear_tap(j + flow.dx(i, j), i + flow.dy(i, j), w, h)) {
        mask[k] = 1;
        for (int ch = 0; ch < c; ++ch) {
          out[k * stride + ch] = tap->sample(f.data(), w, stride, static_cast<std::size_t>(ch));
        }
      }
    }
  }
  return {FeatureMap(w, h, c, std::move(out)), ValidityMask(w, h, std::move(mask))};
}

double triplet_loss(const FeatureMap& f_a, const FeatureMap& f_b, const FlowField& flow) {
  check_same(f_a.width(), f_a.height(), f_b.width(), f_b.height(), "triplet_loss");
  if (f_a.channels() != f_b.channels()) {
    fail(ErrorCode::kDimensionMismatch, "triplet_loss: channel counts differ");
  }
  const auto [warped, mask] = warp_features(f_a, flow);
  const auto c = static_cast<std::size_t>(f_a.channels());
  double aligned = 0.0, unaligned = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < f_a.pixel_count(); ++k) {
    if (!mask.values()[k]) continue;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t idx = k * c + ch;
      aligned += std::abs(warped.data()[idx] - f_b.data()[idx]);
      unaligned += std::abs(f_a.data()[idx] - f_b.data()[idx]);
    }
    count += c;
  }
  if (count == 0) fail(ErrorCode::kEmptyMask, "triplet_loss: no valid pixels");
  const auto n = static_cast<double>(count);
  return aligned / n - unaligned / n;
}

double fil_loss(const GrayImage& img, FeatureTransform f, const FlowField& flow) {
  check_same(img.width(), img.height(), flow.width(), flow.height(), "fil_loss");
  const auto [warped_features, mask] = warp_features(extract_features(img, f), flow);
  const FeatureMap features_of_warped = extract_features(warp_image(img, flow).first, f);
  const auto c = static_cast<std::size_t>(warped_features.channels());
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < img.pixel_count(); ++k) {
    if (!mask.values()[k]) continue;
    for (std::size_t ch = 0; ch < c; ++ch) {
      sum += std::abs(warped_features.data()[k * c + ch] - features_of_warped.data()[k * c + ch]);
    }
    count += c;
  }
  if (count == 0) fail(ErrorCode::kEmptyMask, "fil_loss: no valid pixels");
  return sum / static_cast<double>(count);
}

double inverse_consistency(const FlowField& flow_ab, const FlowField& flow_ba) {
  check_same(flow_ab.width(), flow_ab.height(), flow_ba.width(), flow_ba.height(),
             "inverse_consistency");
  const std::size_t n = flow_ab.pixel_count();
  const auto a = flow_ab.data();
  const auto b = flow_ba.data();
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double sx = a[k] + b[k];
    const double sy = a[n + k] + b[n + k];
    sum += sx * sx + sy * sy;
  }
  return sum / static_cast<double>(n);
}

double recompose_total(const LossReport& r) {
  return (r.triplet_ab + r.triplet_ba) + r.lambda * (r.fil_ab + r.fil_ba) +
         r.mu * r.inverse_consistency;
}

LossReport total_objective(const GrayImage& i_a, const GrayImage& i_b, FeatureTransform f,
                           const FlowField& flow_ab, const FlowField& flow_ba, double lambda,
                           double mu) {
  check_same(i_a.width(), i_a.height(), i_b.width(), i_b.height(), "total_objective");
  const FeatureMap f_a = extract_features(i_a, f);
  const FeatureMap f_b = extract_features(i_b, f);
  LossReport r;
  r.lambda = lambda;
  r.mu = mu;
  r.triplet_ab = triplet_loss(f_a, f_b, flow_ab);
  r.triplet_ba = triplet_loss(f_b, f_a, flow_ba);
  r.triplet = r.triplet_ab + r.triplet_ba;
  r.fil_ab = fil_loss(i_a, f, flow_ab);
  r.fil_ba = fil_loss(i_b, f, flow_ba);
  r.inverse_consistency = inverse_consistency(flow_ab, flow_ba);
  r.total = recompose_total(r);
  r.valid_fraction = warp_mask(flow_ab).valid_fraction();
  return r;
}

}  // namespace hflow
