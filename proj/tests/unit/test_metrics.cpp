#include <doctest.h>

#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include "realm/error.hpp"
#include "realm/metrics.hpp"

using namespace realm;
using namespace realm::metrics;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TEST_CASE("mIoU and accuracy") {
  ConfusionMatrix diag(3);
  for (int k = 0; k < 3; ++k) diag.add(k, k, 5);
  const auto d = miou_and_accuracy(diag);
  for (const auto& v : d.iou) CHECK(*v == 1.0);
  CHECK(d.accuracy == 1.0);

  ConfusionMatrix cm(2);
  cm.add(0, 0);
  cm.add(0, 1);
  cm.add(1, 0);
  cm.add(1, 1);
  const auto s = miou_and_accuracy(cm);
  CHECK(*s.iou[0] == doctest::Approx(1.0 / 3.0));
  CHECK(s.miou == doctest::Approx(1.0 / 3.0));
  CHECK(s.accuracy == 0.5);

  ConfusionMatrix absent(3);
  absent.add(0, 0, 4);
  absent.add(1, 1, 2);
  absent.add(1, 0, 2);
  const auto a = miou_and_accuracy(absent);
  CHECK(!a.iou[2].has_value());
  CHECK(std::isfinite(a.miou));
  CHECK(a.miou == doctest::Approx((4.0 / 6.0 + 2.0 / 4.0) / 2.0));

  CHECK_THROWS_WITH_AS(miou_and_accuracy(ConfusionMatrix(2)), doctest::Contains("EmptyMatrix"), Error);
}

TEST_CASE("confusion from maps ignores 255 and is order independent") {
  std::mt19937_64 rng(1);
  Tensor pred({10, 10}), gt({10, 10});
  for (auto& v : pred.data) v = static_cast<double>(rng() % 4);
  for (auto& v : gt.data) v = rng() % 9 == 0 ? 255.0 : static_cast<double>(rng() % 4);
  const auto cm = ConfusionMatrix::from_maps(pred, gt, 4);
  std::int64_t labeled = 0;
  for (double v : gt.data) labeled += v != 255.0;
  CHECK(cm.total() == labeled);

  std::vector<std::size_t> order(100);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Tensor p2({10, 10}), g2({10, 10});
  for (std::size_t i = 0; i < 100; ++i) {
    p2.data[i] = pred.data[order[i]];
    g2.data[i] = gt.data[order[i]];
  }
  CHECK(miou_and_accuracy(ConfusionMatrix::from_maps(p2, g2, 4)).miou == miou_and_accuracy(cm).miou);
  Tensor bad = pred;
  bad.data[3] = 7;
  CHECK_THROWS_AS(ConfusionMatrix::from_maps(bad, gt, 4), Error);
}

TEST_CASE("abs depth error at cutoff") {
  const Tensor gt({2}, {5.0, 15.0});
  CHECK(abs_depth_error_at_cutoff(Tensor({2}, {6.0, 0.0}), gt, 10.0) == 1.0);
  CHECK(abs_depth_error_at_cutoff(gt, gt, 20.0) == 0.0);
  Tensor g({4}, {1.0, 2.0, 9.0, std::nan("")});
  double prev = -1.0;
  for (double b : {0.0, 0.5, 1.5, 3.0}) {
    Tensor p = g;
    for (auto& v : p.data) v -= b;
    const double e = abs_depth_error_at_cutoff(p, g, 10.0);
    CHECK(e == doctest::Approx(b));
    CHECK(e >= prev);
    prev = e;
  }
  CHECK_THROWS_WITH_AS(abs_depth_error_at_cutoff(gt, Tensor({2}, {50.0, 60.0}), 10.0), doctest::Contains("NoValidPixels"),
                       Error);
}

TEST_CASE("pose AUC") {
  for (double v : pose_auc({0.0, 0.0, 0.0})) CHECK(v == 1.0);
  CHECK(pose_auc({2.5}, {5.0})[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(pose_auc({10.0}, {20.0})[0] == doctest::Approx(0.5).epsilon(1e-15));
  for (double v : pose_auc({21.0, 30.0, kInf})) CHECK(v == 0.0);
  // Two pairs, errors {1, 3}, t = 4: recall 0.5 on [1, 3), 1 on [3, 4) -> (1 + 1) / 4.
  CHECK(pose_auc({1.0, 3.0}, {4.0})[0] == doctest::Approx(0.5));
  CHECK(pose_auc({std::nan("")}, {5.0})[0] == 0.0);
  CHECK_THROWS_WITH_AS(pose_auc({}), doctest::Contains("EmptyErrors"), Error);

  std::mt19937_64 rng(2);
  std::exponential_distribution<double> ex(0.1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> e(1 + rng() % 20);
    for (auto& v : e) v = rng() % 10 == 0 ? kInf : ex(rng);
    const auto auc = pose_auc(e, {1.0, 5.0, 10.0, 20.0, 40.0});
    CHECK(std::is_sorted(auc.begin(), auc.end()));
    for (std::size_t i = 0; i < e.size(); ++i)
      if (e[i] > 10.0 && e.size() > 1) {
        auto fewer = e;
        fewer.erase(fewer.begin() + static_cast<std::ptrdiff_t>(i));
        CHECK(pose_auc(fewer, {10.0})[0] >= pose_auc(e, {10.0})[0]);
      }
  }
}

TEST_CASE("median, inlier ratio, matching density") {
  CHECK(median_error({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median_error({4.0, 1.0, 2.0, 3.0}) == 2.0);
  match::PoseEstimate p;
  p.inliers.assign(100, 0);
  for (int i = 0; i < 40; ++i) p.inliers[static_cast<std::size_t>(i)] = 1;
  CHECK(inlier_ratio(p) == doctest::Approx(0.40));
  CHECK(relative_matching_density({10, 20}, 40) == std::vector<double>{0.25, 0.5});
}

TEST_CASE("angular bins") {
  const auto r = angular_bin_report({5.0, 5.0}, {0.0, 0.0});
  CHECK(*r.auc10[0] == 1.0);
  CHECK(!r.auc10[1].has_value());
  CHECK(!r.auc10[2].has_value());
  CHECK(!r.auc10[3].has_value());
  const auto two = angular_bin_report({10.0, 20.0}, {1.0, 1.0});
  CHECK(two.pairs == std::array<int, 4>{1, 1, 0, 0});
  const auto edge = angular_bin_report({15.0}, {1.0});
  CHECK(edge.pairs == std::array<int, 4>{0, 1, 0, 0});
}

TEST_CASE("bench harness protocol") {
  int extract_calls = 0;
  const auto r = bench_harness(
      [&](int) {
        ++extract_calls;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      },
      [](int) {});
  CHECK(extract_calls == 55);
  CHECK(r.warmup == 5);
  CHECK(r.total_ms.size() == 50);
  CHECK(r.extract_ms.size() == 50);
  CHECK(r.total.mean >= 10.0);
  CHECK(r.total.mean < 25.0);
  CHECK(r.fps == doctest::Approx(1000.0 / r.total.mean));
  CHECK(r.total.median > 0.0);
  CHECK(r.total.std >= 0.0);
  CHECK(r.csv().find("extract_ms") != std::string::npos);

  const auto s = latency_stats({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == 2.5);
  CHECK(s.std == doctest::Approx(std::sqrt(1.25)));
  CHECK(s.min == 1.0);
  CHECK(s.max == 4.0);
}
