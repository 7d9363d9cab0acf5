#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "realm/error.hpp"
#include "realm/heads.hpp"
#include "realm/synthetic.hpp"

using namespace realm;
using namespace realm::heads;

namespace {

Tensor randn(Shape s, std::mt19937_64& rng, double sd = 1.0) {
  Tensor t(std::move(s));
  std::normal_distribution<double> n(0.0, sd);
  for (auto& v : t.data) v = n(rng);
  return t;
}

model::LatentFeatures random_features(std::mt19937_64& rng, int g, int d, double sd = 1.0) {
  return {randn({d}, rng, sd), randn({g * g, d}, rng, sd)};
}

double value(const ad::Var& v) { return v.item(); }

std::vector<std::uint8_t> all_valid(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

// Softmax cross-entropy with focal modulation, evaluated per pixel by hand.
double focal_oracle(const Tensor& logits, const Tensor& labels, const std::vector<double>& w, double gamma) {
  const int c = logits.dim(0), h = logits.dim(1), wd = logits.dim(2);
  double total = 0.0;
  int n = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wd; ++x) {
      const int t = static_cast<int>(labels.at(y, x));
      if (t == kIgnoreLabel) continue;
      double z = 0.0;
      for (int k = 0; k < c; ++k) z += std::exp(logits.at(k, y, x));
      const double p = std::exp(logits.at(t, y, x)) / z;
      total += -w[static_cast<std::size_t>(t)] * std::pow(1.0 - p, gamma) * std::log(p);
      ++n;
    }
  return total / n;
}

double dice_oracle(const Tensor& logits, const Tensor& labels, const std::vector<double>& w, double smooth) {
  const int c = logits.dim(0), h = logits.dim(1), wd = logits.dim(2);
  std::vector<double> inter(c), ps(c), gs(c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wd; ++x) {
      const int t = static_cast<int>(labels.at(y, x));
      if (t == kIgnoreLabel) continue;
      double z = 0.0;
      for (int k = 0; k < c; ++k) z += std::exp(logits.at(k, y, x));
      for (int k = 0; k < c; ++k) {
        const double p = std::exp(logits.at(k, y, x)) / z;
        ps[k] += p;
        if (k == t) inter[k] += p;
      }
      gs[t] += 1.0;
    }
  double num = 0.0, den = 0.0;
  for (int k = 0; k < c; ++k) {
    num += w[k] * (2.0 * inter[k] + smooth) / (ps[k] + gs[k] + smooth);
    den += w[k];
  }
  return 1.0 - num / den;
}

}  // namespace

TEST_CASE("depth bins") {
  const DepthBins b;
  const auto c = b.centers();
  REQUIRE(c.size() == 256);
  CHECK(c.front() == 1.0);
  CHECK(c.back() == 81.0);
  CHECK(c[1] - c[0] == doctest::Approx(80.0 / 255.0));
  CHECK_THROWS_AS((DepthBins{1, 1.0, 81.0}.validate()), Error);
  CHECK_THROWS_AS((DepthBins{8, 5.0, 1.0}.validate()), Error);
}

TEST_CASE("depth_forward: zero head reads exactly 41 m") {
  std::mt19937_64 rng(1);
  const auto head = make_depth_head(32, 256, 1, 0.0);
  const auto d = depth_forward(random_features(rng, 8, 32), head, {}, 56, 56);
  CHECK(d.shape == Shape{56, 56});
  for (double v : d.data) CHECK(v == 41.0);
}

TEST_CASE("depth_from_logits: one-hot on bin 0 reads 1 m; probabilities sum to one") {
  Tensor logits({256, 3, 4});
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) logits.at(0, y, x) = 1000.0;
  for (double v : depth_from_logits(logits, {}).data) CHECK(v == 1.0);

  std::mt19937_64 rng(2);
  const auto head = make_depth_head(32, 256, 3, 0.5);
  const auto f = random_features(rng, 8, 32);
  const model::LatentVars v{ad::constant(Tensor({1, 32}, f.cls.data)), ad::constant(f.patches)};
  const auto p = depth_probabilities(v, head).value();
  CHECK(p.shape == Shape{32 * 32, 256});
  for (int i = 0; i < p.dim(0); ++i) {
    double s = 0.0;
    for (double q : p.row(i)) s += q;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("depth_forward stays within [1, 81] for random heads and inputs") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto head = make_depth_head(32, 256, trial, 0.02 + 2.0 * static_cast<double>(rng() % 100) / 100.0);
    const auto d = depth_forward(random_features(rng, 8, 32, 5.0), head, {}, 20, 20);
    for (double v : d.data) {
      REQUIRE(v >= 1.0);
      REQUIRE(v <= 81.0);
    }
  }
}

TEST_CASE("heads take teacher and student features through one code path") {
  std::mt19937_64 rng(4);
  const auto teacher = model::make_teacher(model::StudentConfig::toy(), 5);
  const auto student = model::make_student(teacher, 6);
  const auto tf = model::teacher_forward_image(randn({1, 112, 112}, rng), teacher);
  std::vector<int> all(64);
  for (int i = 0; i < 64; ++i) all[i] = i;
  const auto sf = model::student_forward(student, randn({5, 112, 112}, rng), all);
  const auto dh = make_depth_head(32, 16, 7);
  const auto sh = make_seg_head(16, 11, 8);
  for (const auto* f : {&tf, &sf}) {
    CHECK(depth_forward(*f, dh, {16, 1.0, 81.0}, 56, 56).shape == Shape{56, 56});
    CHECK(seg_forward(*f, teacher.projector, sh, 56, 56).shape == Shape{11, 56, 56});
  }
}

TEST_CASE("si_log_loss hand values") {
  const Tensor gt({1}, {3.0});
  const auto pred = ad::constant(Tensor({1}, {3.0 * std::exp(1.0)}));
  CHECK(value(si_log_loss(pred, gt, {1}, 0.5)) == doctest::Approx(0.5).epsilon(1e-12));

  std::mt19937_64 rng(9);
  Tensor g({6, 7});
  for (auto& v : g.data) v = 1.0 + static_cast<double>(rng() % 500) / 10.0;
  CHECK(value(si_log_loss(ad::constant(g), g, all_valid(g.size()), 0.5)) == 0.0);
  Tensor scaled = g;
  for (auto& v : scaled.data) v *= 2.5;
  CHECK(std::abs(value(si_log_loss(ad::constant(scaled), g, all_valid(g.size()), 1.0))) <= 1e-12);
}

TEST_CASE("si_log_loss is non-negative for lambda <= 1") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.5, 90.0);
  for (int trial = 0; trial < 500; ++trial) {
    Tensor p({5, 5}), g({5, 5});
    for (auto& v : p.data) v = u(rng);
    for (auto& v : g.data) v = u(rng);
    std::vector<std::uint8_t> valid(25);
    for (auto& v : valid) v = rng() % 4 != 0;
    valid[0] = 1;
    const double lambda = static_cast<double>(rng() % 101) / 100.0;
    CHECK(value(si_log_loss(ad::constant(p), g, valid, lambda)) >= -1e-15);
  }
}

TEST_CASE("multiscale_gradient_loss hand values") {
  const Tensor gt({2, 2});
  const auto pred = ad::constant(Tensor({2, 2}, {0, 1, 0, 1}));
  CHECK(value(multiscale_gradient_loss(pred, gt, all_valid(4), 1)) == doctest::Approx(0.5).epsilon(1e-12));
  // Scales past log2(min side) are skipped rather than failing.
  CHECK(value(multiscale_gradient_loss(pred, gt, all_valid(4), 6)) == doctest::Approx(0.5).epsilon(1e-12));

  std::mt19937_64 rng(11);
  const Tensor g = randn({16, 16}, rng);
  Tensor shifted = g;
  for (auto& v : shifted.data) v += 0.75;
  CHECK(value(multiscale_gradient_loss(ad::constant(shifted), g, all_valid(256), 4)) ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("depth_total_loss: clamping and masking") {
  Tensor gt({2, 3}, {5, 10, 100, 0, std::numeric_limits<double>::infinity(), 1.0});
  // After clamping gt reads {5, 10, 82, -, -, 1.95}.
  Tensor pred({2, 3}, {5, 10, 82, 7, 7, 1.95});
  CHECK(value(depth_total_loss(ad::constant(pred), gt, {})) == doctest::Approx(0.0).epsilon(1e-12));
  pred.data[0] = 6.0;
  const double l = value(depth_total_loss(ad::constant(pred), gt, {}));
  CHECK(std::isfinite(l));
  CHECK(l > 0.0);
  Tensor far({2, 2}, 100.0);
  CHECK(value(depth_total_loss(ad::constant(Tensor({2, 2}, 82.0)), far, {})) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(depth_total_loss(ad::constant(Tensor({1, 1}, 3.0)), Tensor({1, 1}), {}), Error);
}

TEST_CASE("seg_forward shapes and tie-breaking") {
  std::mt19937_64 rng(12);
  const auto teacher = model::make_teacher(model::StudentConfig::toy(), 13);
  const auto f = random_features(rng, 8, 32);
  const auto zero = make_seg_head(16, 11, 1, 0.0);
  const auto logits = seg_forward(f, teacher.projector, zero, 56, 56);
  CHECK(logits.shape == Shape{11, 56, 56});
  for (double v : argmax_classes(logits).data) CHECK(v == 0.0);

  const auto head = make_seg_head(16, 11, 14, 1.0);
  const auto l2 = seg_forward(f, teacher.projector, head, 56, 56);
  Tensor shifted = l2;
  for (int y = 0; y < 56; ++y)
    for (int x = 0; x < 56; ++x) {
      const double c = static_cast<double>(rng() % 1000) - 500.0;
      for (int k = 0; k < 11; ++k) shifted.at(k, y, x) += c;
    }
  CHECK(argmax_classes(shifted) == argmax_classes(l2));
}

TEST_CASE("seg_forward at paper geometry gives 11 x 448 x 448 logits") {
  const auto c = model::StudentConfig::paper();
  std::mt19937_64 rng(15);
  const model::Linear projector{ad::constant(randn({c.d_proj, c.d}, rng, 0.03)), ad::constant(Tensor({c.d_proj}))};
  const auto head = make_seg_head(c.d_proj, 11, 16);
  const auto logits = seg_forward(random_features(rng, 32, 768), projector, head, 448, 448);
  CHECK(logits.shape == Shape{11, 448, 448});
}

TEST_CASE("focal and dice match hand evaluation") {
  SUBCASE("two classes at p = 0.5, gamma 2") {
    const Tensor labels({1, 1}, {1.0});
    const auto logits = ad::constant(Tensor({2, 1, 1}, {0.3, 0.3}));
    CHECK(value(focal_loss(logits, labels, {1.0, 1.0}, 2.0)) == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
    CHECK(std::abs(value(focal_loss(logits, labels, {1.0, 1.0}, 2.0)) - 0.1732867951) < 1e-9);
  }
  SUBCASE("gamma 0 is weighted cross-entropy; random maps against the oracle") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 30; ++trial) {
      const Tensor lg = randn({4, 5, 6}, rng, 2.0);
      Tensor labels({5, 6});
      for (auto& v : labels.data) v = rng() % 6 == 0 ? kIgnoreLabel : static_cast<double>(rng() % 4);
      labels.data[0] = 2.0;
      const std::vector<double> w{1.0, 5.0, 0.5, 2.0};
      const auto v = ad::constant(lg);
      CHECK(std::abs(value(focal_loss(v, labels, w, 0.0)) - focal_oracle(lg, labels, w, 0.0)) < 1e-9);
      CHECK(std::abs(value(focal_loss(v, labels, w, 2.0)) - focal_oracle(lg, labels, w, 2.0)) < 1e-9);
      CHECK(std::abs(value(dice_loss(v, labels, w, 1.0)) - dice_oracle(lg, labels, w, 1.0)) < 1e-9);
      const SegLossConfig cfg{1.0, 1.0, 2.0, 1.0, w};
      CHECK(std::abs(value(seg_total_loss(v, labels, cfg)) -
                     (dice_oracle(lg, labels, w, 1.0) + focal_oracle(lg, labels, w, 2.0))) < 1e-9);
    }
  }
  SUBCASE("dice vanishes for confident correct predictions") {
    Tensor labels({2, 2}, {0, 1, 1, 0});
    Tensor lg({2, 2, 2});
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) lg.at(static_cast<int>(labels.at(y, x)), y, x) = 80.0;
    CHECK(value(dice_loss(ad::constant(lg), labels, {1.0, 1.0}, 1e-6)) == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("seg head training: frozen projector, zero steps, loss halves on the toy task") {
  const auto c = model::StudentConfig::toy();
  const auto teacher = model::make_teacher(c, 21);
  synth::SceneSpec spec;
  const auto raw = synth::synth_paired_dataset(22, 32, spec);
  std::vector<HeadSample> data;
  for (const auto& s : raw) {
    Tensor lab({56, 56});
    for (int y = 0; y < 56; ++y)
      for (int x = 0; x < 56; ++x) lab.at(y, x) = s.labels.at(2 * y, 2 * x);
    data.push_back({model::teacher_forward_image(s.proxy_image, teacher), lab});
  }
  const Tensor proj_before = teacher.projector.w.value();

  auto head0 = make_seg_head(c.d_proj, 11, 23);
  const Tensor w0 = head0.w.value();
  HeadTrainConfig none{0, 8, 3e-2, 0.01, 1.0, 24};
  CHECK(train_seg_head(head0, teacher.projector, data, none).losses.empty());
  CHECK(head0.w.value() == w0);

  HeadTrainConfig cfg{200, 8, 3e-2, 0.01, 1.0, 24};
  const auto r = train_seg_head(head0, teacher.projector, data, cfg);
  REQUIRE(r.losses.size() == 200);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += r.losses[static_cast<std::size_t>(i)];
    last += r.losses[r.losses.size() - 1 - static_cast<std::size_t>(i)];
  }
  CHECK(last <= 0.5 * first);
  CHECK(teacher.projector.w.value() == proj_before);
}

TEST_CASE("depth head training runs and keeps outputs bounded") {
  const auto c = model::StudentConfig::toy();
  const auto teacher = model::make_teacher(c, 31);
  const auto raw = synth::synth_paired_dataset(32, 8, synth::SceneSpec{});
  std::vector<HeadSample> data;
  for (const auto& s : raw) data.push_back({model::teacher_forward_image(s.proxy_image, teacher), s.depth});
  auto head = make_depth_head(c.d, 64, 33);
  const DepthBins bins{64, 1.0, 81.0};
  const auto r = train_depth_head(head, bins, data, {20, 4, 1e-3, 0.01, 1.0, 34});
  CHECK(r.losses.size() == 20);
  for (double l : r.losses) CHECK(std::isfinite(l));
  for (double v : depth_forward(data[0].features, head, bins, 112, 112).data) {
    CHECK(v >= 1.0);
    CHECK(v <= 81.0);
  }
}
