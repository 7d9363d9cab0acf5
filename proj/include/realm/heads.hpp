#pragma once

#include <cstdint>
#include <vector>

#include "realm/autodiff.hpp"
#include "realm/model.hpp"
#include "realm/tensor.hpp"

namespace realm::heads {

inline constexpr int kIgnoreLabel = 255;

struct DepthBins {
  int count = 256;
  double d_min = 1.0;
  double d_max = 81.0;

  /// Linearly spaced, first = d_min, last = d_max.
  std::vector<double> centers() const;
  void validate() const;
};

struct DepthHeadParams {
  ad::Var spatial_w;  ///< [bins x d], 1x1 conv on the patch grid
  ad::Var spatial_b;  ///< [bins]
  ad::Var global_w;   ///< [bins x d], on the CLS token
  ad::Var global_b;   ///< [bins]

  std::vector<ad::Var> params() const { return {spatial_w, spatial_b, global_w, global_b}; }
  int bins() const { return spatial_w.dim(0); }
  int width() const { return spatial_w.dim(1); }
};

struct SegHeadParams {
  ad::Var w;  ///< [C x d_proj]
  ad::Var b;  ///< [C]

  std::vector<ad::Var> params() const { return {w, b}; }
  int classes() const { return w.dim(0); }
};

std::vector<double> default_class_weights();

/// Weights ~ N(0, sd), zero biases. sd = 0 gives the all-zero head.
DepthHeadParams make_depth_head(int d, int bins, std::uint64_t seed, double sd = 0.02);
SegHeadParams make_seg_head(int d_proj, int classes, std::uint64_t seed, double sd = 0.02);

std::int64_t count_params(const DepthHeadParams& p);
std::int64_t count_params(const SegHeadParams& p);

/// Per-pixel bin probabilities at 4x the patch grid, [P x bins] with
/// P = (4G)^2 in row-major pixel order.
ad::Var depth_probabilities(const model::LatentVars& features, const DepthHeadParams& params);
/// Expected depth in metres, [H x W].
ad::Var depth_forward(const model::LatentVars& features, const DepthHeadParams& params, const DepthBins& bins,
                      int out_h, int out_w);
Tensor depth_forward(const model::LatentFeatures& features, const DepthHeadParams& params, const DepthBins& bins,
                     int out_h, int out_w);

/// Raw bin logits [bins x H x W]: spatial path upsampled 4x plus the CLS
/// path, then resized to the output size. Tiled inference accumulates these.
Tensor depth_logits(const model::LatentFeatures& features, const DepthHeadParams& params, int out_h, int out_w);
/// Per-pixel softmax expectation over bin centres, [bins x H x W] -> [H x W].
Tensor depth_from_logits(const Tensor& logits, const DepthBins& bins);

/// Class logits [C x H x W] from patch tokens passed through the frozen projector.
ad::Var seg_forward(const model::LatentVars& features, const model::Linear& projector, const SegHeadParams& params,
                    int out_h, int out_w);
Tensor seg_forward(const model::LatentFeatures& features, const model::Linear& projector,
                   const SegHeadParams& params, int out_h, int out_w);

/// Argmax over classes, lowest index on ties. [C x H x W] -> [H x W].
Tensor argmax_classes(const Tensor& logits);

struct DepthLossWeights {
  double si = 2.0;
  double msg = 0.01;
  double clamp_min = 1.95;
  double clamp_max = 82.0;
  double si_lambda = 0.5;
  int msg_scales = 4;
};

/// pred, gt: same shape; valid: one byte per element.
ad::Var si_log_loss(const ad::Var& pred, const Tensor& gt, const std::vector<std::uint8_t>& valid, double si_lambda);
/// Mean over usable scales of the mean |forward difference| of (pred_log - gt_log)
/// on 2^k average-pooled [H x W] maps. Pooled cells touching an invalid pixel are
/// invalid; differences need both ends valid. Scales smaller than 2 px are skipped.
ad::Var multiscale_gradient_loss(const ad::Var& pred_log, const Tensor& gt_log, const std::vector<std::uint8_t>& valid,
                                 int scales);
/// Clamps gt, masks non-finite / non-positive gt pixels, returns si*SI + msg*MSG.
ad::Var depth_total_loss(const ad::Var& pred, const Tensor& gt, const DepthLossWeights& w);

struct SegLossConfig {
  double lambda_dice = 1.0;
  double lambda_focal = 1.0;
  double gamma = 2.0;
  double dice_smooth = 1.0;
  std::vector<double> class_weights = default_class_weights();
};

/// logits [C x H x W], labels [H x W] holding class ids or kIgnoreLabel.
ad::Var focal_loss(const ad::Var& logits, const Tensor& labels, const std::vector<double>& w, double gamma);
ad::Var dice_loss(const ad::Var& logits, const Tensor& labels, const std::vector<double>& w, double smooth);
ad::Var seg_total_loss(const ad::Var& logits, const Tensor& labels, const SegLossConfig& cfg);

struct HeadSample {
  model::LatentFeatures features;
  Tensor target;  ///< labels or depth, [H x W]
};

struct HeadTrainConfig {
  int steps = 0;
  int batch = 128;
  double lr = 1e-4;
  double weight_decay = 0.01;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;

  static HeadTrainConfig seg_preset();
  static HeadTrainConfig depth_preset();
  void validate() const;
};

struct HeadTrainResult {
  std::vector<double> losses;  ///< one per step
};

/// Only the head parameters are updated. A two-stage curriculum is two
/// consecutive calls on different data, continuing from the returned head.
HeadTrainResult train_seg_head(SegHeadParams& head, const model::Linear& projector,
                               const std::vector<HeadSample>& data, const HeadTrainConfig& config,
                               const SegLossConfig& loss = {});
HeadTrainResult train_depth_head(DepthHeadParams& head, const DepthBins& bins, const std::vector<HeadSample>& data,
                                 const HeadTrainConfig& config, const DepthLossWeights& loss = {});

}  // namespace realm::heads
