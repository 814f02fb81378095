#include "hflow/textures.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "hflow/error.hpp"
#include "hflow/rng.hpp"

namespace hflow {

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// One octave of value noise in [0, 1]: random lattice values every `spacing`
// pixels, blended with smoothstep weights.
std::vector<double> value_octave(int width, int height, double spacing, CounterRng& rng) {
  const int gw = static_cast<int>(std::ceil(width / spacing)) + 2;
  const int gh = static_cast<int>(std::ceil(height / spacing)) + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
  for (double& v : lattice) v = rng.uniform();
  std::vector<double> out(static_cast<std::size_t>(width) * height);
  for (int i = 0; i < height; ++i) {
    const double gy = i / spacing;
    const int y0 = static_cast<int>(gy);
    const double ty = smoothstep(gy - y0);
    for (int j = 0; j < width; ++j) {
      const double gx = j / spacing;
      const int x0 = static_cast<int>(gx);
      const double tx = smoothstep(gx - x0);
      auto at = [&](int y, int x) { return lattice[static_cast<std::size_t>(y) * gw + x]; };
      const double top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
      const double bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
      out[static_cast<std::size_t>(i) * width + j] = top * (1.0 - ty) + bot * ty;
    }
  }
  return out;
}

std::vector<double> fractal(int width, int height, std::uint64_t seed,
                            std::initializer_list<double> spacings, double persistence) {
  std::vector<double> acc(static_cast<std::size_t>(width) * height, 0.0);
  double amp = 1.0, total = 0.0;
  std::uint64_t octave = 0;
  for (double s : spacings) {
    CounterRng rng(seed, 0x54455854ULL + octave++);  // "TEXT"
    const auto layer = value_octave(width, height, s, rng);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += amp * (layer[k] - 0.5);
    total += amp;
    amp *= persistence;
  }
  for (double& v : acc) v /= total;  // now in [-0.5, 0.5]
  return acc;
}

GrayImage finish(int width, int height, std::vector<double> v, double center, double contrast) {
  for (double& x : v) x = std::clamp(center + contrast * x, 0.0, 1.0);
  return GrayImage(width, height, std::move(v));
}

}  // namespace

std::string_view to_string(TextureKind k) {
  switch (k) {
    case TextureKind::kValueNoise: return "value_noise";
    case TextureKind::kLowTexture: return "low_texture";
    case TextureKind::kCheckerboard: return "checkerboard";
    case TextureKind::kRamp: return "ramp";
  }
  return "value_noise";
}

TextureKind parse_texture_kind(std::string_view name) {
  for (auto k : {TextureKind::kValueNoise, TextureKind::kLowTexture, TextureKind::kCheckerboard,
                 TextureKind::kRamp}) {
    if (to_string(k) == name) return k;
  }
  fail(ErrorCode::kInvalidArgument, "unknown texture '" + std::string(name) + "'");
}

GrayImage make_texture(TextureKind kind, int width, int height, std::uint64_t seed) {
  if (width <= 0 || height <= 0) fail(ErrorCode::kInvalidArgument, "texture size must be positive");
  switch (kind) {
    case TextureKind::kValueNoise:
      return finish(width, height, fractal(width, height, seed, {48, 24, 12, 6, 4}, 0.7), 0.5,
                    1.6);
    case TextureKind::kLowTexture:
      return finish(width, height, fractal(width, height, seed, {96, 48}, 0.5), 0.5, 0.35);
    case TextureKind::kCheckerboard: {
      constexpr double kSquare = 24.0;
      std::vector<double> v(static_cast<std::size_t>(width) * height);
      for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
          // Soft edges keep the image differentiable at pixel scale.
          const double sx = std::sin(std::numbers::pi * (j + 0.5) / kSquare);
          const double sy = std::sin(std::numbers::pi * (i + 0.5) / kSquare);
          v[static_cast<std::size_t>(i) * width + j] = 0.5 * std::tanh(4.0 * sx * sy);
        }
      }
      return finish(width, height, std::move(v), 0.5, 0.8);
    }
    case TextureKind::kRamp: {
      auto v = fractal(width, height, seed, {16, 8}, 0.5);
      for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
          auto& x = v[static_cast<std::size_t>(i) * width + j];
          x = 0.8 * ((i + j) / double(width + height - 2) - 0.5) + 0.2 * x;
        }
      }
      return finish(width, height, std::move(v), 0.5, 1.0);
    }
  }
  fail(ErrorCode::kInvalidArgument, "unknown texture kind");
}

}  // namespace hflow
