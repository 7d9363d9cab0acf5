#pragma once

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "realm/event_io.hpp"
#include "realm/tensor.hpp"

namespace realm::infer {

/// Four-corner tiling of an H x W canvas with square tiles. Coinciding
/// corners (H or W equal to the tile size) collapse to one tile.
struct TilePlan {
  int height = 0;
  int width = 0;
  int tile = 448;
  std::vector<std::pair<int, int>> origins;  ///< (row, col), row-major order
  std::vector<int> count;                    ///< H x W coverage counts

  int count_at(int y, int x) const { return count[static_cast<std::size_t>(y) * width + x]; }
};

TilePlan plan_corner4(int height, int width, int tile = 448);

/// Maps a [C x T x T] tile to a [K x T x T] raw output.
using TilePredictor = std::function<Tensor(const Tensor&)>;

/// Sums tile outputs at their origins (in origin order) and divides by the
/// count mask. `input` is [C x H x W].
Tensor tile_inference(const Tensor& input, const TilePredictor& predictor, const TilePlan& plan);

struct Padding {
  int top = 0, bottom = 0, left = 0, right = 0;
  int height = 0, width = 0;  ///< original size
};

/// Zero-pads the last two axes of a [H x W] or [C x H x W] tensor to
/// target x target; an odd remainder goes to the bottom / right.
std::pair<Tensor, Padding> pad_symmetric(const Tensor& input, int target);
Tensor unpad(const Tensor& padded, const Padding& pad);

struct HoldState {
  std::optional<Tensor> last;
  int staleness = 0;
};

struct HoldOutput {
  std::optional<Tensor> output;  ///< empty = no output yet
  bool held = false;

  bool no_output_yet() const { return !output.has_value(); }
};

using WindowPredictor = std::function<Tensor(const events::EventWindow&)>;

/// Non-empty window: predict and store. Empty window: replay the stored
/// output (held) or report that nothing is available yet.
HoldOutput hold_step(HoldState& state, const events::EventWindow& window, const WindowPredictor& predict);
std::vector<HoldOutput> memory_hold(const std::vector<events::EventWindow>& windows, const WindowPredictor& predict,
                                    HoldState& state);

/// Projects [M x d] tokens (M = G^2) on the top three principal components and
/// min-max scales each channel into [0, 1]; missing or flat components read 0.5.
/// Returns G x G x 3.
Tensor pca_feature_image(const Tensor& patches);

}  // namespace realm::infer
