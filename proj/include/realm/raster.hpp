#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "realm/tensor.hpp"

namespace realm::raster {

/// Greyscale PFM ("Pf"), little-endian float32, rows stored bottom-up.
void write_pfm(const std::string& path, const Tensor& map);
Tensor read_pfm(const std::string& path);

/// 8-bit binary PGM (P5). Values are rounded and clamped to [0, 255].
void write_pgm(const std::string& path, const Tensor& map);
Tensor read_pgm(const std::string& path);

/// 8-bit binary PPM (P6) from an H x W x 3 image in [0, 1].
void write_ppm(const std::string& path, const Tensor& rgb);

std::vector<std::uint8_t> read_bytes(const std::string& path);
void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes);
void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a64_hex(std::span<const std::uint8_t> bytes);
std::string file_hash(const std::string& path);

}  // namespace realm::raster
