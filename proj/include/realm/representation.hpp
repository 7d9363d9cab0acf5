#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "realm/event_io.hpp"
#include "realm/tensor.hpp"

namespace realm::repr {

/// B x H x W event tensor, bin-major.
struct VoxelGrid {
  Tensor values;

  VoxelGrid() = default;
  VoxelGrid(int bins, int height, int width) : values({bins, height, width}) {}

  int bins() const { return values.dim(0); }
  int height() const { return values.dim(1); }
  int width() const { return values.dim(2); }
};

/// Binary H x W footprint of a window.
struct OccupancyGrid {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t active() const;
};

/// Bilinear temporal splatting of signed polarities into `bins` slices.
/// Events outside H x W are skipped.
VoxelGrid encode_voxel_grid(const events::EventWindow& window, int bins, int height, int width);

/// Standardizes the nonzero entries (population statistics over nonzero
/// entries only); zeros stay zero.
VoxelGrid normalize_voxel_grid(const VoxelGrid& grid);

OccupancyGrid occupancy(const events::EventWindow& window, int height, int width);

/// Centered square crop of the longer axis, then per-bin bilinear resize.
VoxelGrid resize_center_crop(const VoxelGrid& grid, int target);

std::vector<std::uint8_t> serialize_voxel_grid(const VoxelGrid& grid);
VoxelGrid deserialize_voxel_grid(std::span<const std::uint8_t> bytes);
void write_voxel_grid_file(const std::string& path, const VoxelGrid& grid);
VoxelGrid read_voxel_grid_file(const std::string& path);

}  // namespace realm::repr
