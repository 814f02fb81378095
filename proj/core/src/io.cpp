#include "hflow/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "hflow/error.hpp"

namespace hflow::io {

namespace {

using nlohmann::json;

constexpr std::array<char, 4> kFloMagic{'P', 'I', 'E', 'H'};
constexpr std::array<char, 4> kFmapMagic{'F', 'M', 'A', 'P'};
constexpr std::int64_t kMaxFloPixels = (std::int64_t{1} << 31) / 8;

std::uint32_t load_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void store_u32(unsigned char* p, std::uint32_t v) {
  p[0] = static_cast<unsigned char>(v);
  p[1] = static_cast<unsigned char>(v >> 8);
  p[2] = static_cast<unsigned char>(v >> 16);
  p[3] = static_cast<unsigned char>(v >> 24);
}

float load_f32(const unsigned char* p) { return std::bit_cast<float>(load_u32(p)); }
void store_f32(unsigned char* p, float v) { store_u32(p, std::bit_cast<std::uint32_t>(v)); }

void read_exact(std::istream& in, unsigned char* dst, std::size_t n, const char* what) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    fail(ErrorCode::kTruncatedFile, std::string(what) + ": unexpected end of data");
  }
}

void write_bytes(std::ostream& out, const std::vector<unsigned char>& bytes) {
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIoFailure, "write failed");
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot create " + path.string());
  return out;
}

// PNM header token, skipping whitespace and '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
    if (tok.size() > 16) fail(ErrorCode::kBadHeader, "PGM header token too long");
  }
  if (tok.empty()) fail(ErrorCode::kBadHeader, "PGM header ended early");
  return tok;
}

int pnm_int(std::istream& in) {
  const std::string tok = pnm_token(in);
  if (!std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    fail(ErrorCode::kBadHeader, "PGM header field '" + tok + "' is not a number");
  }
  const long v = std::stol(tok);
  if (v <= 0 || v > (1L << 30)) fail(ErrorCode::kBadHeader, "PGM header value out of range");
  return static_cast<int>(v);
}

// Middlebury color wheel (Baker et al.), integer construction as in colorcode.cpp.
std::vector<std::array<int, 3>> color_wheel() {
  constexpr int kRY = 15, kYG = 6, kGC = 4, kCB = 11, kBM = 13, kMR = 6;
  std::vector<std::array<int, 3>> w;
  for (int i = 0; i < kRY; ++i) w.push_back({255, 255 * i / kRY, 0});
  for (int i = 0; i < kYG; ++i) w.push_back({255 - 255 * i / kYG, 255, 0});
  for (int i = 0; i < kGC; ++i) w.push_back({0, 255, 255 * i / kGC});
  for (int i = 0; i < kCB; ++i) w.push_back({0, 255 - 255 * i / kCB, 255});
  for (int i = 0; i < kBM; ++i) w.push_back({255 * i / kBM, 0, 255});
  for (int i = 0; i < kMR; ++i) w.push_back({255, 0, 255 - 255 * i / kMR});
  return w;
}

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kBadHeader, std::string(what) + ": " + e.what());
  }
}

}  // namespace

FlowField read_flo(std::istream& in) {
  std::array<unsigned char, 12> header{};
  in.read(reinterpret_cast<char*>(header.data()), 4);
  if (in.gcount() != 4) fail(ErrorCode::kTruncatedFile, "flo: missing magic");
  if (!std::equal(kFloMagic.begin(), kFloMagic.end(), header.begin())) {
    fail(ErrorCode::kBadMagic, "flo: magic is not PIEH");
  }
  read_exact(in, header.data() + 4, 8, "flo header");
  const auto width = static_cast<std::int32_t>(load_u32(header.data() + 4));
  const auto height = static_cast<std::int32_t>(load_u32(header.data() + 8));
  if (width <= 0 || height <= 0) fail(ErrorCode::kBadHeader, "flo: non-positive dimensions");
  if (static_cast<std::int64_t>(width) * height > kMaxFloPixels) {
    fail(ErrorCode::kDimensionOverflow, "flo: W*H exceeds 2^31/8");
  }
  const std::size_t n = static_cast<std::size_t>(width) * height;
  std::vector<unsigned char> raw(8 * n);
  read_exact(in, raw.data(), raw.size(), "flo data");
  std::vector<double> planar(2 * n);
  for (std::size_t k = 0; k < n; ++k) {
    planar[k] = load_f32(raw.data() + 8 * k);
    planar[n + k] = load_f32(raw.data() + 8 * k + 4);
  }
  return FlowField(width, height, std::move(planar));
}

FlowField read_flo(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_flo(in);
}

void write_flo(std::ostream& out, const FlowField& f) {
  const std::size_t n = f.pixel_count();
  std::vector<unsigned char> bytes(12 + 8 * n);
  std::copy(kFloMagic.begin(), kFloMagic.end(), bytes.begin());
  store_u32(bytes.data() + 4, static_cast<std::uint32_t>(f.width()));
  store_u32(bytes.data() + 8, static_cast<std::uint32_t>(f.height()));
  const auto dx = f.dx_plane();
  const auto dy = f.dy_plane();
  for (std::size_t k = 0; k < n; ++k) {
    store_f32(bytes.data() + 12 + 8 * k, static_cast<float>(dx[k]));
    store_f32(bytes.data() + 16 + 8 * k, static_cast<float>(dy[k]));
  }
  write_bytes(out, bytes);
}

void write_flo(const std::filesystem::path& path, const FlowField& f) {
  auto out = open_out(path);
  write_flo(out, f);
}

GrayImage read_pgm(std::istream& in) {
  const std::string magic = pnm_token(in);
  if (magic.size() != 2 || magic[0] != 'P') fail(ErrorCode::kBadHeader, "not a PNM file");
  if (magic != "P5") fail(ErrorCode::kUnsupportedFormat, "only binary P5 PGM is supported");
  const int width = pnm_int(in);
  const int height = pnm_int(in);
  const int maxval = pnm_int(in);
  if (maxval != 255 && maxval != 65535) {
    fail(ErrorCode::kUnsupportedFormat, "PGM maxval must be 255 or 65535");
  }
  const std::size_t n = static_cast<std::size_t>(width) * height;
  const std::size_t bpp = maxval == 255 ? 1 : 2;
  std::vector<unsigned char> raw(n * bpp);
  read_exact(in, raw.data(), raw.size(), "pgm data");
  std::vector<double> pixels(n);
  for (std::size_t k = 0; k < n; ++k) {
    const unsigned v = bpp == 1 ? raw[k] : (unsigned{raw[2 * k]} << 8) | raw[2 * k + 1];
    pixels[k] = static_cast<double>(v) / maxval;
  }
  return GrayImage(width, height, std::move(pixels));
}

GrayImage read_pgm(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_pgm(in);
}

void write_pgm(std::ostream& out, const GrayImage& img) {
  const std::string header =
      "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<unsigned char> bytes(header.begin(), header.end());
  for (double p : img.pixels()) {
    bytes.push_back(static_cast<unsigned char>(std::clamp(std::floor(p * 255.0 + 0.5), 0.0, 255.0)));
  }
  write_bytes(out, bytes);
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  auto out = open_out(path);
  write_pgm(out, img);
}

void write_ppm(std::ostream& out, const RgbImage& img) {
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<unsigned char> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), img.rgb.begin(), img.rgb.end());
  write_bytes(out, bytes);
}

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  auto out = open_out(path);
  write_ppm(out, img);
}

RgbImage colorize_flow(const FlowField& f, double max_mag) {
  static const auto wheel = color_wheel();
  const int ncols = static_cast<int>(wheel.size());
  const std::size_t n = f.pixel_count();
  const auto dx = f.dx_plane();
  const auto dy = f.dy_plane();
  if (!(max_mag > 0.0)) {
    max_mag = 0.0;
    for (std::size_t k = 0; k < n; ++k) max_mag = std::max(max_mag, std::hypot(dx[k], dy[k]));
    if (max_mag == 0.0) max_mag = 1.0;
  }
  RgbImage img{f.width(), f.height(), std::vector<std::uint8_t>(3 * n)};
  for (std::size_t k = 0; k < n; ++k) {
    const double fx = dx[k] / max_mag, fy = dy[k] / max_mag;
    const double rad = std::sqrt(fx * fx + fy * fy);
    const double a = std::atan2(-fy, -fx) / std::numbers::pi;
    const double fk = (a + 1.0) / 2.0 * (ncols - 1);
    const int k0 = static_cast<int>(fk);
    const int k1 = (k0 + 1) % ncols;
    const double t = fk - k0;
    for (int b = 0; b < 3; ++b) {
      const double c0 = wheel[k0][b] / 255.0;
      const double c1 = wheel[k1][b] / 255.0;
      double col = (1.0 - t) * c0 + t * c1;
      if (rad <= 1.0) {
        col = 1.0 - rad * (1.0 - col);
      } else {
        col *= 0.75;
      }
      img.rgb[3 * k + b] = static_cast<std::uint8_t>(static_cast<int>(255.0 * col));
    }
  }
  return img;
}

FeatureMap read_fmap(std::istream& in) {
  std::array<unsigned char, 16> header{};
  in.read(reinterpret_cast<char*>(header.data()), 4);
  if (in.gcount() != 4) fail(ErrorCode::kTruncatedFile, "fmap: missing magic");
  if (!std::equal(kFmapMagic.begin(), kFmapMagic.end(), header.begin())) {
    fail(ErrorCode::kBadMagic, "fmap: magic is not FMAP");
  }
  read_exact(in, header.data() + 4, 12, "fmap header");
  const std::uint32_t w = load_u32(header.data() + 4);
  const std::uint32_t h = load_u32(header.data() + 8);
  const std::uint32_t c = load_u32(header.data() + 12);
  if (w == 0 || h == 0 || c == 0 || w > (1u << 30) || h > (1u << 30) || c > (1u << 30)) {
    fail(ErrorCode::kBadHeader, "fmap: dimensions out of range");
  }
  const std::uint64_t count = std::uint64_t{w} * h * c;
  if (count > (std::uint64_t{1} << 31) / 4) fail(ErrorCode::kDimensionOverflow, "fmap too large");
  std::vector<unsigned char> raw(4 * count);
  read_exact(in, raw.data(), raw.size(), "fmap data");
  std::vector<double> data(count);
  for (std::size_t k = 0; k < count; ++k) data[k] = load_f32(raw.data() + 4 * k);
  return FeatureMap(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c), std::move(data));
}

FeatureMap read_fmap(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_fmap(in);
}

void write_fmap(std::ostream& out, const FeatureMap& m) {
  std::vector<unsigned char> bytes(16 + 4 * m.data().size());
  std::copy(kFmapMagic.begin(), kFmapMagic.end(), bytes.begin());
  store_u32(bytes.data() + 4, static_cast<std::uint32_t>(m.width()));
  store_u32(bytes.data() + 8, static_cast<std::uint32_t>(m.height()));
  store_u32(bytes.data() + 12, static_cast<std::uint32_t>(m.channels()));
  for (std::size_t k = 0; k < m.data().size(); ++k) {
    store_f32(bytes.data() + 16 + 4 * k, static_cast<float>(m.data()[k]));
  }
  write_bytes(out, bytes);
}

void write_fmap(const std::filesystem::path& path, const FeatureMap& m) {
  auto out = open_out(path);
  write_fmap(out, m);
}

std::string format_weights(const WeightsDoc& doc) {
  json j;
  j["width"] = doc.width;
  j["height"] = doc.height;
  j["convention"] = doc.convention;
  j["alpha"] = doc.weights.alpha;
  j["residual"] = doc.residual;
  return j.dump(2) + "\n";
}

WeightsDoc parse_weights(const std::string& text) {
  const json j = parse_json(text, "weights document");
  try {
    WeightsDoc doc;
    doc.width = j.at("width").get<int>();
    doc.height = j.at("height").get<int>();
    doc.convention = j.at("convention").get<std::string>();
    const auto alpha = j.at("alpha").get<std::vector<double>>();
    if (alpha.size() != kNumBases) fail(ErrorCode::kBadHeader, "alpha must have 8 entries");
    std::copy(alpha.begin(), alpha.end(), doc.weights.alpha.begin());
    doc.residual = j.at("residual").get<double>();
    return doc;
  } catch (const json::exception& e) {
    fail(ErrorCode::kBadHeader, std::string("weights document: ") + e.what());
  }
}

std::string format_homography(const Homography& h) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({h(r, 0), h(r, 1), h(r, 2)});
  json j;
  j["matrix"] = rows;
  return j.dump(2) + "\n";
}

Homography parse_homography(const std::string& text) {
  const json j = parse_json(text, "homography document");
  try {
    const auto rows = j.at("matrix").get<std::vector<std::vector<double>>>();
    if (rows.size() != 3) fail(ErrorCode::kBadHeader, "matrix must be 3x3");
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r) {
      if (rows[r].size() != 3) fail(ErrorCode::kBadHeader, "matrix must be 3x3");
      for (int c = 0; c < 3; ++c) m(r, c) = rows[r][c];
    }
    return Homography(m);
  } catch (const json::exception& e) {
    fail(ErrorCode::kBadHeader, std::string("homography document: ") + e.what());
  }
}

std::string read_text(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) fail(ErrorCode::kIoFailure, "write failed: " + path.string());
}

}  // namespace hflow::io
