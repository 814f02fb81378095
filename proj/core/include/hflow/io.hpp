#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "hflow/bases.hpp"
#include "hflow/geometry.hpp"
#include "hflow/subspace.hpp"

namespace hflow::io {

// Middlebury .flo: "PIEH" (float 202021.25 little-endian), int32 width,
// int32 height, then interleaved (dx, dy) float32 little-endian, row-major.
// In memory flows are planar; conversion happens here.
FlowField read_flo(std::istream& in);
FlowField read_flo(const std::filesystem::path& path);
void write_flo(std::ostream& out, const FlowField& f);
void write_flo(const std::filesystem::path& path, const FlowField& f);

// Binary PGM (P5). Reading accepts maxval 255 or 65535 (16-bit big-endian);
// pixel = raw / maxval. Writing always uses maxval 255 and rounds half away
// from zero.
GrayImage read_pgm(std::istream& in);
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(std::ostream& out, const GrayImage& img);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

void write_ppm(std::ostream& out, const RgbImage& img);
void write_ppm(const std::filesystem::path& path, const RgbImage& img);

/// Middlebury color-wheel rendering: hue from flow angle, saturation from
/// magnitude / max_mag (max_mag <= 0 means use the field's largest magnitude).
/// Zero flow is white.
RgbImage colorize_flow(const FlowField& f, double max_mag = 0.0);

// Raw feature map: "FMAP", u32 width, u32 height, u32 channels (little-endian),
// then float32 little-endian values, row-major with channels innermost.
FeatureMap read_fmap(std::istream& in);
FeatureMap read_fmap(const std::filesystem::path& path);
void write_fmap(std::ostream& out, const FeatureMap& m);
void write_fmap(const std::filesystem::path& path, const FeatureMap& m);

struct WeightsDoc {
  int width = 0;
  int height = 0;
  std::string convention{kBasisConvention};
  BasisWeights weights;
  double residual = 0.0;
};

/// JSON text with doubles printed at round-trip precision.
std::string format_weights(const WeightsDoc& doc);
WeightsDoc parse_weights(const std::string& text);

std::string format_homography(const Homography& h);
Homography parse_homography(const std::string& text);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace hflow::io
