#include "realm/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "realm/error.hpp"

namespace realm::metrics {

void ConfusionMatrix::add(int gt, int pred, std::int64_t n) {
  if (gt < 0 || gt >= classes || pred < 0 || pred >= classes)
    throw Error(ErrorCode::InvalidArgument, "class id outside confusion matrix");
  counts[static_cast<std::size_t>(gt) * classes + pred] += n;
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }

ConfusionMatrix ConfusionMatrix::from_maps(const Tensor& pred, const Tensor& gt, int classes, int ignore) {
  if (pred.shape != gt.shape) throw Error(ErrorCode::ShapeMismatch, "prediction and label maps differ in shape");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (static_cast<int>(gt.data[i]) == ignore) continue;
    cm.add(static_cast<int>(gt.data[i]), static_cast<int>(pred.data[i]));
  }
  return cm;
}

SegScores miou_and_accuracy(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total == 0) throw Error(ErrorCode::EmptyMatrix, "confusion matrix is empty");
  SegScores s;
  s.iou.resize(static_cast<std::size_t>(cm.classes));
  std::int64_t diag = 0;
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < cm.classes; ++c) {
    std::int64_t row = 0, col = 0;
    for (int k = 0; k < cm.classes; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::int64_t tp = cm.at(c, c);
    diag += tp;
    const std::int64_t uni = row + col - tp;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    s.iou[static_cast<std::size_t>(c)] = iou;
    sum += iou;
    ++present;
  }
  s.miou = present ? sum / present : 0.0;
  s.accuracy = static_cast<double>(diag) / static_cast<double>(total);
  return s;
}

double abs_depth_error_at_cutoff(const Tensor& pred, const Tensor& gt, double cutoff) {
  if (pred.size() != gt.size()) throw Error(ErrorCode::ShapeMismatch, "prediction and gt sizes differ");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double g = gt.data[i];
    if (!std::isfinite(g) || !(g > 0.0) || g > cutoff) continue;
    sum += std::abs(pred.data[i] - g);
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::NoValidPixels, "no gt pixel within the cutoff");
  return sum / static_cast<double>(n);
}

std::vector<double> pose_auc(const std::vector<double>& errors, const std::vector<double>& thresholds) {
  if (errors.empty()) throw Error(ErrorCode::EmptyErrors, "pose AUC needs at least one error");
  std::vector<double> e = errors;
  for (double& v : e)
    if (std::isnan(v)) v = std::numeric_limits<double>::infinity();
  std::sort(e.begin(), e.end());
  const double n = static_cast<double>(e.size());
  std::vector<double> out;
  for (double t : thresholds) {
    if (!(t > 0.0)) throw Error(ErrorCode::InvalidArgument, "AUC threshold must be positive");
    // recall is (k+1)/n on [e_k, e_{k+1}); integrate those steps up to t.
    double area = 0.0;
    for (std::size_t k = 0; k < e.size() && e[k] < t; ++k) {
      const double next = k + 1 < e.size() ? std::min(e[k + 1], t) : t;
      area += (next - std::max(e[k], 0.0)) * static_cast<double>(k + 1) / n;
    }
    out.push_back(area / t);
  }
  return out;
}

double median_error(std::vector<double> errors) {
  if (errors.empty()) throw Error(ErrorCode::EmptyInput, "median of an empty list");
  const std::size_t mid = (errors.size() - 1) / 2;
  std::nth_element(errors.begin(), errors.begin() + static_cast<std::ptrdiff_t>(mid), errors.end());
  return errors[mid];
}

double inlier_ratio(const match::PoseEstimate& pose) {
  if (pose.inliers.empty()) throw Error(ErrorCode::EmptyInput, "pose has no correspondences");
  return static_cast<double>(pose.inlier_count()) / static_cast<double>(pose.inliers.size());
}

std::vector<double> relative_matching_density(const std::vector<int>& inliers, int max_keypoints) {
  if (inliers.empty()) throw Error(ErrorCode::EmptyInput, "no pairs");
  if (max_keypoints <= 0) throw Error(ErrorCode::InvalidArgument, "max keypoints must be positive");
  std::vector<double> out;
  for (int v : inliers) out.push_back(static_cast<double>(v) / max_keypoints);
  return out;
}

AngularBinReport angular_bin_report(const std::vector<double>& baselines, const std::vector<double>& errors) {
  if (baselines.size() != errors.size()) throw Error(ErrorCode::ShapeMismatch, "baselines and errors differ in length");
  AngularBinReport r;
  std::array<std::vector<double>, 4> bins;
  for (std::size_t i = 0; i < baselines.size(); ++i) {
    int b = 3;
    for (int k = 0; k < 3; ++k)
      if (baselines[i] < AngularBinReport::kLower[static_cast<std::size_t>(k) + 1]) {
        b = k;
        break;
      }
    bins[static_cast<std::size_t>(b)].push_back(errors[i]);
  }
  for (std::size_t b = 0; b < 4; ++b) {
    r.pairs[b] = static_cast<int>(bins[b].size());
    if (!bins[b].empty()) r.auc10[b] = pose_auc(bins[b], {10.0}).front();
  }
  return r;
}

LatencyStats latency_stats(const std::vector<double>& s) {
  LatencyStats st;
  if (s.empty()) return st;
  const double n = static_cast<double>(s.size());
  st.mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
  double var = 0.0;
  for (double v : s) var += (v - st.mean) * (v - st.mean);
  st.std = std::sqrt(var / n);
  st.median = median_error(s);
  st.min = *std::min_element(s.begin(), s.end());
  st.max = *std::max_element(s.begin(), s.end());
  return st;
}

BenchReport bench_harness(const std::function<void(int)>& extract, const std::function<void(int)>& match, int warmup,
                          int iters) {
  if (warmup < 0 || iters < 1) throw Error(ErrorCode::InvalidArgument, "bench needs warmup >= 0 and iters >= 1");
  using clock = std::chrono::steady_clock;
  BenchReport r;
  r.warmup = warmup;
  for (int i = 0; i < warmup; ++i) {
    if (extract) extract(i);
    if (match) match(i);
  }
  for (int i = 0; i < iters; ++i) {
    const auto t0 = clock::now();
    if (extract) extract(warmup + i);
    const auto t1 = clock::now();
    if (match) match(warmup + i);
    const auto t2 = clock::now();
    const double e = std::chrono::duration<double, std::milli>(t1 - t0).count();
    const double m = std::chrono::duration<double, std::milli>(t2 - t1).count();
    r.extract_ms.push_back(e);
    r.match_ms.push_back(m);
    r.total_ms.push_back(e + m);
  }
  r.extract = latency_stats(r.extract_ms);
  r.match = latency_stats(r.match_ms);
  r.total = latency_stats(r.total_ms);
  r.fps = r.total.mean > 0.0 ? 1000.0 / r.total.mean : std::numeric_limits<double>::infinity();
  return r;
}

std::string BenchReport::csv() const {
  std::string out = "iteration,extract_ms,match_ms,total_ms\n";
  char buf[160];
  for (std::size_t i = 0; i < total_ms.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f\n", i, extract_ms[i], match_ms[i], total_ms[i]);
    out += buf;
  }
  return out;
}

std::string BenchReport::table() const {
  char buf[512];
  std::string out;
  std::snprintf(buf, sizeof buf, "warmup %d, timed %zu\n%-8s %10s %10s %10s\n", warmup, total_ms.size(), "stage",
                "mean_ms", "median_ms", "std_ms");
  out += buf;
  const std::pair<const char*, const LatencyStats*> rows[] = {{"extract", &extract}, {"match", &match}, {"total", &total}};
  for (const auto& [name, st] : rows) {
    std::snprintf(buf, sizeof buf, "%-8s %10.3f %10.3f %10.3f\n", name, st->mean, st->median, st->std);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "fps %.2f\n", fps);
  out += buf;
  return out;
}

}  // namespace realm::metrics
