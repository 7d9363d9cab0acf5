#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "realm/representation.hpp"

namespace realm::masking {

/// Binary token grid, row-major; `values` doubles as the flattened length-M view.
struct PatchMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> values;

  PatchMask() = default;
  PatchMask(int r, int c, std::uint8_t fill = 0)
      : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, fill) {}

  std::size_t size() const { return values.size(); }
  std::size_t active() const;
  std::uint8_t at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
  void set(int r, int c, std::uint8_t v = 1) { values[static_cast<std::size_t>(r) * cols + c] = v; }
  /// True when every active token of *this is active in `other`.
  bool subset_of(const PatchMask& other) const;

  friend bool operator==(const PatchMask&, const PatchMask&) = default;
};

/// Dilation curriculum: either discrete epoch -> radius steps, or the linear
/// form radius = min(sigma_max, floor(alpha * global_step)).
struct MaskSchedule {
  enum class Kind { Steps, Linear };
  Kind kind = Kind::Steps;
  std::map<int, int> steps{{10, 2}, {15, 4}, {20, 6}};
  double alpha = 0.0;
  int sigma_max = 0;

  /// "10:2,15:4,20:6"
  static MaskSchedule parse_steps(const std::string& text);
  /// "alpha:0.01,sigma_max:6"
  static MaskSchedule parse_linear(const std::string& text);
  std::string to_string() const;

  int radius_at(int epoch, std::int64_t global_step = 0) const;
  void validate() const;
};

struct DropoutSpec {
  double rho = 0.30;
  int start_epoch = 8;
  std::uint64_t seed = 0;
};

/// Token j is active iff any occupied pixel lies in its patch. Sizes that do
/// not divide `patch` are zero-padded on the bottom/right.
PatchMask patch_activity_mask(const repr::OccupancyGrid& occ, int patch);

/// Chebyshev dilation as `radius` passes of 3x3 max-pooling (stride 1, pad 1).
PatchMask dilate(const PatchMask& mask, int radius);

PatchMask mask_at_epoch(const PatchMask& base, int epoch, const MaskSchedule& schedule,
                        std::int64_t global_step = 0);

/// Kept token indices, ascending. Before spec.start_epoch every index is kept;
/// afterwards exactly M - floor(rho * M) indices, chosen uniformly and
/// deterministically from (seed, epoch, draw_index).
std::vector<int> sample_token_dropout(int num_tokens, const DropoutSpec& spec, int epoch,
                                      std::uint64_t draw_index);

}  // namespace realm::masking
