#include "realm/representation.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "realm/autodiff.hpp"
#include "realm/error.hpp"

namespace realm::repr {

std::size_t OccupancyGrid::active() const {
  std::size_t n = 0;
  for (auto v : values) n += v;
  return n;
}

VoxelGrid encode_voxel_grid(const events::EventWindow& window, int bins, int height, int width) {
  if (bins < 1 || height < 0 || width < 0)
    throw Error(ErrorCode::InvalidArgument, "voxel grid needs bins >= 1 and non-negative size");
  VoxelGrid grid(bins, height, width);
  const double span = window.t_end > window.t_start
                          ? static_cast<double>(window.t_end - window.t_start)
                          : 0.0;
  for (const auto& e : window.events) {
    if (e.x >= width || e.y >= height) continue;
    double tstar = 0.0;
    if (span > 0.0 && e.t > window.t_start)
      tstar = (bins - 1) * static_cast<double>(e.t - window.t_start) / span;
    const int lo = static_cast<int>(std::floor(tstar));
    for (int b = std::max(lo, 0); b <= std::min(lo + 1, bins - 1); ++b) {
      const double w = std::max(0.0, 1.0 - std::abs(b - tstar));
      if (w > 0.0) grid.values.at(b, e.y, e.x) += e.p * w;
    }
  }
  return grid;
}

VoxelGrid normalize_voxel_grid(const VoxelGrid& grid) {
  VoxelGrid out = grid;
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : grid.values.data)
    if (v != 0.0) {
      sum += v;
      ++n;
    }
  if (n == 0) return out;
  const double mu = sum / static_cast<double>(n);
  double var = 0.0;
  for (double v : grid.values.data)
    if (v != 0.0) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / static_cast<double>(n));
  for (double& v : out.values.data) {
    if (v == 0.0) continue;
    v = sd > 0.0 ? (v - mu) / sd : 0.0;
  }
  return out;
}

OccupancyGrid occupancy(const events::EventWindow& window, int height, int width) {
  OccupancyGrid occ{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 0)};
  for (const auto& e : window.events)
    if (e.x < width && e.y < height) occ.values[static_cast<std::size_t>(e.y) * width + e.x] = 1;
  return occ;
}

VoxelGrid resize_center_crop(const VoxelGrid& grid, int target) {
  if (target < 1) throw Error(ErrorCode::InvalidArgument, "target must be >= 1");
  const int b = grid.bins(), h = grid.height(), w = grid.width();
  if (h == 0 || w == 0) throw Error(ErrorCode::DegenerateInput, "grid has zero extent");
  const int side = std::min(h, w);
  const int oy = (h - side) / 2;
  const int ox = (w - side) / 2;
  Tensor cropped({b, side, side});
  for (int c = 0; c < b; ++c)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) cropped.at(c, y, x) = grid.values.at(c, y + oy, x + ox);
  VoxelGrid out;
  if (side == target) {
    out.values = std::move(cropped);
    return out;
  }
  ad::NoGradGuard guard;
  out.values = ad::bilinear_resize(ad::constant(std::move(cropped)), target, target).value();
  return out;
}

namespace {

constexpr char kMagic[4] = {'R', 'V', 'X', 'G'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

std::vector<std::uint8_t> serialize_voxel_grid(const VoxelGrid& grid) {
  for (int d : grid.values.shape)
    if (d > 0xFFFF) throw Error(ErrorCode::InvalidArgument, "voxel grid dimension exceeds u16");
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u16(out, static_cast<std::uint16_t>(grid.bins()));
  put_u16(out, static_cast<std::uint16_t>(grid.height()));
  put_u16(out, static_cast<std::uint16_t>(grid.width()));
  out.reserve(out.size() + 4 * grid.values.size());
  for (double v : grid.values.data) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

VoxelGrid deserialize_voxel_grid(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorCode::BadMagic, "expected RVXG magic");
  if (bytes.size() < 10) throw Error(ErrorCode::TruncatedFile, "RVXG header truncated");
  const int b = get_u16(bytes.data() + 4), h = get_u16(bytes.data() + 6), w = get_u16(bytes.data() + 8);
  VoxelGrid grid(b, h, w);
  if (bytes.size() < 10 + 4 * grid.values.size())
    throw Error(ErrorCode::TruncatedFile, "RVXG payload truncated");
  const std::uint8_t* p = bytes.data() + 10;
  for (std::size_t i = 0; i < grid.values.size(); ++i, p += 4) {
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) |
                               (static_cast<std::uint32_t>(p[3]) << 24);
    grid.values.data[i] = std::bit_cast<float>(bits);
  }
  return grid;
}

void write_voxel_grid_file(const std::string& path, const VoxelGrid& grid) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path);
  const auto bytes = serialize_voxel_grid(grid);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

VoxelGrid read_voxel_grid_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_voxel_grid(bytes);
}

}  // namespace realm::repr
