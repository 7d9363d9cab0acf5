#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "realm/matching.hpp"
#include "realm/tensor.hpp"

namespace realm::metrics {

/// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::int64_t> counts;

  explicit ConfusionMatrix(int c = 0) : classes(c), counts(static_cast<std::size_t>(c) * c, 0) {}
  std::int64_t at(int gt, int pred) const { return counts[static_cast<std::size_t>(gt) * classes + pred]; }
  void add(int gt, int pred, std::int64_t n = 1);
  std::int64_t total() const;

  /// Pixels whose gt equals `ignore` are skipped.
  static ConfusionMatrix from_maps(const Tensor& pred, const Tensor& gt, int classes, int ignore = 255);
};

struct SegScores {
  std::vector<std::optional<double>> iou;  ///< empty for zero-union classes
  double miou = 0.0;
  double accuracy = 0.0;
};

SegScores miou_and_accuracy(const ConfusionMatrix& cm);

/// Mean |pred - gt| over pixels with finite gt in (0, cutoff].
double abs_depth_error_at_cutoff(const Tensor& pred, const Tensor& gt, double cutoff);

/// (1/t) * integral over [0, t] of the recall step function, per threshold.
/// Failures enter as +inf.
std::vector<double> pose_auc(const std::vector<double>& errors, const std::vector<double>& thresholds = {5.0, 10.0, 20.0});

/// Lower middle element for even counts.
double median_error(std::vector<double> errors);
double inlier_ratio(const match::PoseEstimate& pose);
std::vector<double> relative_matching_density(const std::vector<int>& inliers, int max_keypoints);

struct AngularBinReport {
  static constexpr std::array<double, 4> kLower{0.0, 15.0, 30.0, 45.0};
  std::array<std::optional<double>, 4> auc10;
  std::array<int, 4> pairs{};
};

/// Half-open bins [0,15), [15,30), [30,45), [45,inf) on the ground-truth
/// rotation magnitude; AUC at 10 degrees within each.
AngularBinReport angular_bin_report(const std::vector<double>& baselines_deg, const std::vector<double>& errors_deg);

struct LatencyStats {
  double mean = 0.0, median = 0.0, std = 0.0, min = 0.0, max = 0.0;
};

LatencyStats latency_stats(const std::vector<double>& samples_ms);

struct BenchReport {
  int warmup = 0;
  std::vector<double> extract_ms, match_ms, total_ms;
  LatencyStats extract, match, total;
  double fps = 0.0;  ///< 1000 / total.mean

  std::string csv() const;
  std::string table() const;
};

/// Runs `warmup` untimed iterations then `iters` timed ones; each iteration
/// calls extract(i) then match(i).
BenchReport bench_harness(const std::function<void(int)>& extract, const std::function<void(int)>& match,
                          int warmup = 5, int iters = 50);

}  // namespace realm::metrics
