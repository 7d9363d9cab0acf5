#include "realm/raster.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "realm/error.hpp"

namespace realm::raster {

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::IoError, "write failed for " + path);
}

void write_text(const std::string& path, const std::string& text) {
  write_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string read_text(const std::string& path) {
  const auto b = read_bytes(path);
  return {b.begin(), b.end()};
}

std::string fnv1a64_hex(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::string& path) { return fnv1a64_hex(read_bytes(path)); }

namespace {

std::pair<int, int> plane(const Tensor& t) {
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  if (t.rank() == 3 && t.dim(0) == 1) return {t.dim(1), t.dim(2)};
  throw Error(ErrorCode::ShapeMismatch, "raster expects H x W, got " + shape_str(t.shape));
}

/// Reads the ASCII header tokens of a netpbm-style file; returns the payload offset.
std::size_t header_tokens(const std::vector<std::uint8_t>& b, int count, std::vector<std::string>& out) {
  std::size_t i = 0;
  while (static_cast<int>(out.size()) < count) {
    while (i < b.size() && std::isspace(b[i])) ++i;
    if (i < b.size() && b[i] == '#') {
      while (i < b.size() && b[i] != '\n') ++i;
      continue;
    }
    if (i >= b.size()) throw Error(ErrorCode::TruncatedFile, "raster header truncated");
    std::string tok;
    while (i < b.size() && !std::isspace(b[i])) tok.push_back(static_cast<char>(b[i++]));
    out.push_back(tok);
  }
  return i + 1;  // single whitespace byte before the payload
}

}  // namespace

void write_pfm(const std::string& path, const Tensor& map) {
  const auto [h, w] = plane(map);
  std::string head = "Pf\n" + std::to_string(w) + " " + std::to_string(h) + "\n-1.0\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  for (int y = h - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(map.data[static_cast<std::size_t>(y) * w + x]));
      for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
    }
  write_bytes(path, out);
}

Tensor read_pfm(const std::string& path) {
  const auto b = read_bytes(path);
  std::vector<std::string> tok;
  if (b.size() < 2 || b[0] != 'P' || b[1] != 'f') throw Error(ErrorCode::BadMagic, path + " is not a greyscale PFM");
  const std::size_t off = header_tokens(b, 4, tok);
  if (tok[0] != "Pf") throw Error(ErrorCode::BadMagic, path + " is not a greyscale PFM");
  const int w = std::stoi(tok[1]), h = std::stoi(tok[2]);
  const bool little = std::stod(tok[3]) < 0;
  if (b.size() < off + 4ull * w * h) throw Error(ErrorCode::TruncatedFile, path + " payload truncated");
  Tensor t({h, w});
  const std::uint8_t* p = b.data() + off;
  for (int y = h - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x, p += 4) {
      std::uint32_t bits = 0;
      for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(p[little ? k : 3 - k]) << (8 * k);
      t.at(y, x) = std::bit_cast<float>(bits);
    }
  return t;
}

void write_pgm(const std::string& path, const Tensor& map) {
  const auto [h, w] = plane(map);
  std::string head = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  for (double v : map.data) out.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l)));
  write_bytes(path, out);
}

Tensor read_pgm(const std::string& path) {
  const auto b = read_bytes(path);
  std::vector<std::string> tok;
  if (b.size() < 2 || b[0] != 'P' || b[1] != '5') throw Error(ErrorCode::BadMagic, path + " is not a binary PGM");
  const std::size_t off = header_tokens(b, 4, tok);
  if (tok[0] != "P5") throw Error(ErrorCode::BadMagic, path + " is not a binary PGM");
  const int w = std::stoi(tok[1]), h = std::stoi(tok[2]);
  if (std::stoi(tok[3]) > 255) throw Error(ErrorCode::InvalidArgument, "only 8-bit PGM is supported");
  if (b.size() < off + static_cast<std::size_t>(w) * h) throw Error(ErrorCode::TruncatedFile, path + " payload truncated");
  Tensor t({h, w});
  for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = b[off + i];
  return t;
}

void write_ppm(const std::string& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3) throw Error(ErrorCode::ShapeMismatch, "PPM expects H x W x 3");
  const int h = rgb.dim(0), w = rgb.dim(1);
  std::string head = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  for (double v : rgb.data) out.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0l, 255l)));
  write_bytes(path, out);
}

}  // namespace realm::raster
