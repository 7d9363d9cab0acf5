#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "realm/distillation.hpp"
#include "realm/error.hpp"
#include "realm/optim.hpp"
#include "realm/rng.hpp"

using namespace realm;
using namespace realm::distill;
using model::LatentFeatures;

namespace {

Tensor randn(Shape s, std::mt19937_64& rng, double sd = 1.0) {
  Tensor t(std::move(s));
  std::normal_distribution<double> n(0.0, sd);
  for (auto& v : t.data) v = n(rng);
  return t;
}

LatentFeatures random_features(std::mt19937_64& rng, int m, int d) { return {randn({d}, rng), randn({m, d}, rng)}; }

masking::PatchMask random_mask(std::mt19937_64& rng, int g) {
  masking::PatchMask m(g, g);
  for (auto& v : m.values) v = rng() % 3 == 0;
  m.values[rng() % m.values.size()] = 1;
  return m;
}

struct ToySetup {
  model::TeacherParams teacher;
  model::Student student;
  std::vector<DistillSample> data;

  explicit ToySetup(int n, std::uint64_t seed = 5) {
    const auto c = model::StudentConfig::toy();
    teacher = model::make_teacher(c, derive_seed(seed, {1}));
    student = model::make_student(teacher, derive_seed(seed, {2}));
    synth::SceneSpec spec;
    data = prepare_samples(synth::synth_paired_dataset(derive_seed(seed, {3}), n, spec), teacher);
  }
};

TrainConfig tiny_config() {
  auto c = TrainConfig::toy();
  c.epochs = 1;
  c.steps_per_epoch = 3;
  c.micro_batch = 2;
  c.accumulation = 1;
  return c;
}

std::vector<Tensor> snapshot(const std::vector<ad::Var>& vars) {
  std::vector<Tensor> out;
  for (const auto& v : vars) out.push_back(v.value());
  return out;
}

std::vector<ad::Var> frozen_vars(const model::Student& s, const model::TeacherParams& t) {
  std::vector<ad::Var> out;
  for (const auto& [n, v] : model::named_backbone(*s.backbone)) out.push_back(v);
  for (const auto& [n, v] : model::named_teacher_extras(t)) out.push_back(v);
  return out;
}

}  // namespace

TEST_CASE("loss: identical features give zero") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = random_features(rng, 16, 8);
    const auto l = masked_distill_loss(f, f, random_mask(rng, 4), {});
    CHECK(l.total == 0.0);
  }
}

TEST_CASE("loss: hand value on one orthogonal token pair") {
  const LatentFeatures e{Tensor({2}), Tensor({1, 2}, {1, 0})};
  const LatentFeatures i{Tensor({2}), Tensor({1, 2}, {0, 1})};
  masking::PatchMask m(1, 1, 1);
  const auto l = masked_distill_loss(e, i, m, {}, false);
  CHECK(l.mse == doctest::Approx(1.0));
  CHECK(l.cos == doctest::Approx(1.0));
  CHECK(l.l1 == doctest::Approx(1.0));
  CHECK(l.total == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("loss: CLS enters as one extra unmasked term") {
  const LatentFeatures e{Tensor({2}, {1, 0}), Tensor({2, 2}, {1, 0, 5, 5})};
  const LatentFeatures i{Tensor({2}, {0, 1}), Tensor({2, 2}, {0, 1, 5, 5})};
  masking::PatchMask m(1, 2);
  m.set(0, 0);
  // Token 0 contributes 1.0, CLS contributes 1.0: (1 + 1) / (1 + 1).
  CHECK(masked_distill_loss(e, i, m, {}).total == doctest::Approx(1.0));
  m.set(0, 1);
  CHECK(masked_distill_loss(e, i, m, {}).total == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("loss: exact invariance outside the mask, in value and gradient") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = random_features(rng, 16, 6);
    const auto t = random_features(rng, 16, 6);
    const auto mask = random_mask(rng, 4);
    auto s2 = s, t2 = t;
    for (int j = 0; j < 16; ++j)
      if (!mask.values[j])
        for (int k = 0; k < 6; ++k) {
          s2.patches.at(j, k) *= 2.0;
          t2.patches.at(j, k) = 100.0 * static_cast<double>(rng() % 7);
        }
    CHECK(masked_distill_loss(s, t, mask, {}).total == masked_distill_loss(s2, t2, mask, {}).total);

    model::LatentVars v{ad::parameter(Tensor({1, 6}, s.cls.data)), ad::parameter(s.patches)};
    ad::backward(masked_distill_loss(v, t, mask, {}).total);
    for (int j = 0; j < 16; ++j)
      if (!mask.values[j])
        for (int k = 0; k < 6; ++k) CHECK(v.patches.grad()[static_cast<std::size_t>(j) * 6 + k] == 0.0);
  }
}

TEST_CASE("loss: non-negative; per-term scaling behaviour") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_features(rng, 9, 5);
    auto t = random_features(rng, 9, 5);
    if (trial % 4 == 0) t = s;
    const auto mask = random_mask(rng, 3);
    CHECK(masked_distill_loss(s, t, mask, {}).total >= 0.0);
  }
  const auto s = random_features(rng, 1, 5);
  const auto t = random_features(rng, 1, 5);
  masking::PatchMask one(1, 1, 1);
  const double c = 3.5;
  auto sc = s, tc = t;
  for (auto& v : sc.patches.data) v *= c;
  for (auto& v : tc.patches.data) v *= c;
  const auto a = masked_distill_loss(s, t, one, {}, false);
  const auto b = masked_distill_loss(sc, tc, one, {}, false);
  CHECK(b.cos == doctest::Approx(a.cos).epsilon(1e-12));
  CHECK(b.mse == doctest::Approx(c * c * a.mse).epsilon(1e-12));
  CHECK(b.l1 == doctest::Approx(c * a.l1).epsilon(1e-12));
}

TEST_CASE("loss: error cases") {
  std::mt19937_64 rng(4);
  const auto s = random_features(rng, 4, 3);
  auto t = random_features(rng, 4, 3);
  masking::PatchMask empty(2, 2);
  CHECK_THROWS_WITH_AS(masked_distill_loss(s, t, empty, {}), doctest::Contains("EmptyMask"), Error);
  masking::PatchMask one(2, 2, 1);
  t.patches.at(1, 1) = std::nan("");
  CHECK_THROWS_WITH_AS(masked_distill_loss(s, t, one, {}), doctest::Contains("NonFiniteFeature"), Error);
  masking::PatchMask wrong(3, 3, 1);
  CHECK_THROWS_AS(masked_distill_loss(s, s, wrong, {}), Error);
  CHECK_THROWS_AS((LossWeights{-1.0, 0.3, 0.6}.validate()), Error);
}

TEST_CASE("gradient clipping rescales to the requested norm") {
  auto p = ad::parameter(Tensor({2}, {0.0, 0.0}));
  auto q = ad::parameter(Tensor({1}, {0.0}));
  p.mutable_grad() = {1.2, 0.0};
  q.mutable_grad() = {1.6};
  std::vector<ad::Var> params{p, q};
  CHECK(optim::clip_grad_norm(params, 1.0) == doctest::Approx(2.0));
  CHECK(optim::global_grad_norm(params) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(q.grad()[0] == doctest::Approx(0.8));
}

TEST_CASE("train_step: zero learning rate leaves parameters untouched") {
  ToySetup setup(4);
  auto config = tiny_config();
  config.lr = 0.0;
  const auto before = snapshot(setup.student.trainable());
  TrainState state(setup.student, config);
  std::vector<const DistillSample*> batch;
  for (const auto& s : setup.data) batch.push_back(&s);
  const auto m = train_step(state, batch, 0, config, 1);
  CHECK(m.grad_norm > 0.0);
  const auto after = snapshot(state.student.trainable());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("training: frozen weights stay frozen, trainables move, runs are bit-identical") {
  ToySetup a(6), b(6);
  const auto frozen_before = snapshot(frozen_vars(a.student, a.teacher));
  const auto train_before = snapshot(a.student.trainable());
  const auto config = tiny_config();
  const auto ra = run_distillation(config, a.student, a.data);
  const auto rb = run_distillation(config, b.student, b.data);
  CHECK(ra.steps == 3);
  CHECK(loss_csv(ra.curve) == loss_csv(rb.curve));
  const auto frozen_after = snapshot(frozen_vars(a.student, a.teacher));
  for (std::size_t i = 0; i < frozen_before.size(); ++i) CHECK(frozen_before[i] == frozen_after[i]);
  const auto train_after = snapshot(a.student.trainable());
  int moved = 0;
  for (std::size_t i = 0; i < train_before.size(); ++i) moved += train_before[i] != train_after[i];
  CHECK(moved == static_cast<int>(train_before.size()));
}

TEST_CASE("run_distillation: zero epochs returns the initialization") {
  ToySetup s(2);
  auto config = tiny_config();
  config.epochs = 0;
  const auto before = snapshot(s.student.trainable());
  const auto r = run_distillation(config, s.student, s.data);
  CHECK(r.steps == 0);
  CHECK(r.curve.empty());
  const auto after = snapshot(s.student.trainable());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("run_distillation: curriculum radius switches at epochs 10, 15, 20") {
  ToySetup s(1);
  auto config = tiny_config();
  config.epochs = 22;
  config.steps_per_epoch = 1;
  config.micro_batch = 1;
  config.dropout.rho = 0.0;
  std::vector<int> radius_by_epoch;
  run_distillation(config, s.student, s.data, -1, [&](const StepMetrics& m) { radius_by_epoch.push_back(m.radius); });
  REQUIRE(radius_by_epoch.size() == 22);
  for (int e = 0; e < 22; ++e) {
    const int expected = e < 10 ? 0 : e < 15 ? 2 : e < 20 ? 4 : 6;
    CHECK(radius_by_epoch[static_cast<std::size_t>(e)] == expected);
  }
}

TEST_CASE("grad_check: parameter outside the loss support") {
  ToySetup s(1);
  // With every token kept the mask token never enters the graph.
  std::vector<int> all(64);
  std::iota(all.begin(), all.end(), 0);
  const auto fn = sample_loss_fn(s.student, s.data[0], s.data[0].base_mask, all, {}, false, 0);
  const auto r = grad_check(fn, {s.student.mask_token}, 1e-4, 32, 1);
  CHECK(r.coordinates == 32);
  CHECK(r.max_abs_error == 0.0);
  CHECK(s.student.mask_token.grad() == std::vector<double>(32, 0.0));
}

TEST_CASE("grad_check: every trainable group matches central differences") {
  ToySetup s(2, 9);
  std::mt19937_64 rng(10);
  for (auto& blk : s.student.lora)
    for (auto& a : blk)
      if (a) a->b.mutable_value() = randn(a->b.shape(), rng, 0.1);
  std::vector<int> kept;
  for (int i = 0; i < 64; ++i)
    if (i % 4) kept.push_back(i);
  const auto& sample = s.data[0].skippable() ? s.data[1] : s.data[0];
  const auto fn = sample_loss_fn(s.student, sample, masking::dilate(sample.base_mask, 1), kept, {}, true, 77);

  std::vector<ad::Var> emb, lora;
  for (const auto& [n, v] : model::named_embedder(s.student.embedder)) emb.push_back(v);
  for (const auto& [n, v] : model::named_lora(s.student.lora)) lora.push_back(v);
  const std::vector<std::pair<const char*, std::vector<ad::Var>>> groups = {
      {"embedder", emb},
      {"lora", lora},
      {"norm", {s.student.norm.gamma, s.student.norm.beta}},
      {"mask_token", {s.student.mask_token}},
  };
  for (const auto& [name, params] : groups) {
    CAPTURE(name);
    const auto r = grad_check(fn, params, 1e-4, 24, 3);
    CHECK(r.coordinates == 24);
    CHECK(r.max_rel_error <= 1e-4);
  }
  const auto bad = grad_check(fn, lora, 1e-4, 24, 3, 2.0);
  CHECK(bad.max_rel_error == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("synthetic data: static scenes are skippable; moving edges fire; seeds reproduce") {
  synth::SceneSpec spec;
  spec.static_scene = true;
  for (const auto& s : synth::synth_paired_dataset(1, 5, spec)) {
    CHECK(s.events.events.empty());
    CHECK(s.skippable());
  }

  synth::SceneSpec moving;
  synth::Scene scene;
  scene.size = 112;
  synth::Shape2D sq;
  sq.cx = 50;
  sq.cy = 56;
  sq.half_w = sq.half_h = 10;
  sq.vx = 6;
  sq.intensity = 0.9;
  scene.shapes.push_back(sq);
  const auto w = synth::simulate_events(scene, moving);
  REQUIRE(!w.events.empty());
  for (const auto& e : w.events) {
    const double x = e.x + 0.5, y = e.y + 0.5;
    CHECK(y >= 56 - 10 - 1);
    CHECK(y <= 56 + 10 + 1);
    // Leading edge sweeps [60, 66], trailing edge [40, 46]; the interior never changes.
    const bool leading = x >= 60 - 1 && x <= 66 + 1;
    const bool trailing = x >= 40 - 1 && x <= 46 + 1;
    CHECK((leading || trailing));
    CHECK(e.p == (leading ? 1 : -1));
  }

  const auto a = synth::synth_paired_dataset(7, 3, moving);
  const auto b = synth::synth_paired_dataset(7, 3, moving);
  for (int i = 0; i < 3; ++i) {
    CHECK(a[i].events.events == b[i].events.events);
    CHECK(a[i].proxy_image == b[i].proxy_image);
    CHECK(a[i].labels == b[i].labels);
    CHECK(a[i].depth == b[i].depth);
  }
  CHECK(a[0].events.events != synth::synth_paired_dataset(8, 1, moving)[0].events.events);
}

TEST_CASE("TrainConfig validation and presets") {
  CHECK(TrainConfig::paper().effective_batch() == 512);
  CHECK(TrainConfig::paper().lr == 1e-3);
  CHECK(TrainConfig::paper_cosine().lr == 1e-4);
  CHECK(TrainConfig::paper_cosine().lr_schedule == optim::LrSchedule::Cosine);
  auto c = TrainConfig::toy();
  c.grad_clip_norm = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig::toy();
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
}
