#pragma once

#include <cstdint>
#include <string_view>

#include "hflow/geometry.hpp"

namespace hflow {

// Procedural base images for the synthetic benchmark, so no dataset is needed.
enum class TextureKind {
  kValueNoise,    // multi-octave value noise, lattice spacings 48..4 px
  kLowTexture,    // two coarse octaves at low contrast
  kCheckerboard,  // 24 px squares with a soft edge
  kRamp,          // diagonal ramp plus faint value noise
};

std::string_view to_string(TextureKind k);
TextureKind parse_texture_kind(std::string_view name);

/// Deterministic in (kind, width, height, seed).
GrayImage make_texture(TextureKind kind, int width, int height, std::uint64_t seed);

}  // namespace hflow
