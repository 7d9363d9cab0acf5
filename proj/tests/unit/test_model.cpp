#include <doctest.h>

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "realm/distillation.hpp"
#include "realm/error.hpp"
#include "realm/heads.hpp"
#include "realm/model.hpp"

using namespace realm;
using namespace realm::model;

namespace {

std::vector<int> all_tokens(int m) {
  std::vector<int> v(static_cast<std::size_t>(m));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

Tensor randn(Shape s, std::mt19937_64& rng, double sd = 1.0) {
  Tensor t(std::move(s));
  std::normal_distribution<double> n(0.0, sd);
  for (auto& v : t.data) v = n(rng);
  return t;
}

void randomize_lora(Student& s, std::mt19937_64& rng, double sd) {
  for (auto& blk : s.lora)
    for (auto& a : blk)
      if (a) a->b.mutable_value() = randn(a->b.shape(), rng, sd);
}

double rel_diff(const Tensor& a, const Tensor& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

}  // namespace

TEST_CASE("toy embedder emits a 64 x 32 token matrix; zero grid gives zero tokens") {
  const auto c = StudentConfig::toy();
  const auto e = make_embedder(c, 1);
  std::mt19937_64 rng(1);
  const auto t = embed_voxels(randn({5, 112, 112}, rng), e);
  CHECK(t.shape == Shape{64, 32});
  for (double v : embed_voxels(Tensor({5, 112, 112}), e).data) CHECK(v == 0.0);
  CHECK_THROWS_AS(embed_voxels(Tensor({4, 112, 112}), e), Error);
}

TEST_CASE("paper embedder emits 1024 x 768 tokens") {
  const auto e = make_embedder(StudentConfig::paper(), 2);
  const auto t = embed_voxels(Tensor({5, 448, 448}, 0.5), e);
  CHECK(t.shape == Shape{1024, 768});
  CHECK(t.all_finite());
}

TEST_CASE("parameter accounting") {
  const auto p = count_params(StudentConfig::paper(), 256, 11);
  CHECK(p.depth_head == 393'728);
  CHECK(p.seg_head == 11'275);
  CHECK(p.lora == 4'718'592);
  // Independent enumeration: 12 layers x r (in + out) over qkv, proj, fc1, fc2.
  const std::int64_t d = 768, h = 3072, r = 32;
  CHECK(p.lora == 12 * r * ((d + 3 * d) + (d + d) + (d + h) + (h + d)));
  CHECK(p.embedder == 5'229'312);
  CHECK(p.backbone == 85'863'168);
  const double fraction = static_cast<double>(p.trainable()) / static_cast<double>(p.student_total());
  CHECK(fraction == doctest::Approx(0.1047).epsilon(0.02));

  // Constructed toy parameters agree with the closed form.
  const auto c = StudentConfig::toy();
  const auto teacher = make_teacher(c, 3);
  const auto s = make_student(teacher, 4);
  const auto tc = count_params(c);
  std::vector<ad::Var> emb, lora;
  for (const auto& [n, v] : named_embedder(s.embedder)) emb.push_back(v);
  for (const auto& [n, v] : named_lora(s.lora)) lora.push_back(v);
  CHECK(count_elements(emb) == tc.embedder);
  CHECK(count_elements(lora) == tc.lora);
  std::vector<ad::Var> bb;
  for (const auto& [n, v] : named_backbone(*s.backbone)) bb.push_back(v);
  CHECK(count_elements(bb) + 3 * c.d == tc.backbone);  // + mask token + final norm
  const auto depth = heads::make_depth_head(768, 256, 1);
  const auto seg = heads::make_seg_head(1024, 11, 1);
  CHECK(heads::count_params(depth) == 393'728);
  CHECK(heads::count_params(seg) == 11'275);
}

TEST_CASE("lora_merge hand values") {
  Linear lin{ad::constant(Tensor({2, 2}, {1, 0, 0, 1})), ad::constant(Tensor({2}))};
  LoRAAdapter a{ad::parameter(Tensor({2, 1}, {1, 0})), ad::parameter(Tensor({1, 2}, {0, 1})), 1.0, 0.0};
  const Tensor m = lora_merge(lin, a);
  // y = W x + (x A) B: input 0 feeds output 1.
  CHECK(m == Tensor({2, 2}, {1, 0, 1, 1}));
  a.b.mutable_value() = Tensor({1, 2});
  CHECK(lora_merge(lin, a) == lin.w.value());
}

TEST_CASE("full-rank lora_merge reproduces an arbitrary dense update") {
  std::mt19937_64 rng(6);
  const int in = 5, out = 7, r = 5;
  Linear lin{ad::constant(randn({out, in}, rng)), ad::constant(Tensor({out}))};
  const Tensor delta = randn({out, in}, rng);
  Tensor a({in, r}), b({r, out});
  for (int i = 0; i < in; ++i) a.at(i, i) = 1.0;
  const double scale = 2.0;
  for (int k = 0; k < r; ++k)
    for (int o = 0; o < out; ++o) b.at(k, o) = delta.at(o, k) / scale;
  const LoRAAdapter ad{ad::parameter(a), ad::parameter(b), scale, 0.0};
  const Tensor m = lora_merge(lin, ad);
  double worst = 0.0;
  for (int o = 0; o < out; ++o)
    for (int i = 0; i < in; ++i) worst = std::max(worst, std::abs(m.at(o, i) - (lin.w.value().at(o, i) + delta.at(o, i))));
  CHECK(worst <= 1e-6);
}

TEST_CASE("zero-init adapters are an exact identity") {
  const auto c = StudentConfig::toy();
  const auto teacher = make_teacher(c, 11);
  const auto s = make_student(teacher, 12);
  std::mt19937_64 rng(13);
  ad::NoGradGuard g;
  for (int trial = 0; trial < 5; ++trial) {
    const auto tokens = ad::constant(randn({64, 32}, rng));
    const auto with = backbone_forward(tokens, all_tokens(64), *s.backbone, &s.lora, s.norm, nullptr,
                                       {true, static_cast<std::uint64_t>(trial)}).detach();
    const auto without = backbone_forward(tokens, all_tokens(64), *s.backbone, nullptr, s.norm, nullptr).detach();
    CHECK(with.patches == without.patches);
    CHECK(with.cls == without.cls);
  }
}

TEST_CASE("merged and unmerged forwards agree over 100 inputs") {
  const auto c = StudentConfig::toy();
  const auto teacher = make_teacher(c, 21);
  auto s = make_student(teacher, 22);
  std::mt19937_64 rng(23);
  randomize_lora(s, rng, 0.3);
  const auto merged = merge_adapters(s);
  ad::NoGradGuard g;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto tokens = ad::constant(randn({64, 32}, rng));
    const auto a = backbone_forward(tokens, all_tokens(64), *s.backbone, &s.lora, s.norm, nullptr).detach();
    const auto b = backbone_forward(tokens, all_tokens(64), *merged, nullptr, s.norm, nullptr).detach();
    worst = std::max({worst, rel_diff(b.patches, a.patches), rel_diff(b.cls, a.cls)});
    // Sanity: the adapters actually change the output.
    if (trial == 0) {
      const auto f = backbone_forward(tokens, all_tokens(64), *s.backbone, nullptr, s.norm, nullptr).detach();
      CHECK(rel_diff(f.patches, a.patches) > 1e-3);
    }
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("forward determinism and kept-order independence") {
  const auto c = StudentConfig::toy();
  const auto teacher = make_teacher(c, 31);
  const auto s = make_student(teacher, 32);
  std::mt19937_64 rng(33);
  const Tensor grid = randn({5, 112, 112}, rng);
  const auto a = student_forward(s, grid, all_tokens(64));
  const auto b = student_forward(s, grid, all_tokens(64));
  CHECK(a.patches == b.patches);
  CHECK(a.cls == b.cls);

  std::vector<int> kept;
  for (int i = 0; i < 64; i += 3) kept.push_back(i);
  auto shuffled = kept;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto k1 = student_forward(s, grid, kept);
  const auto k2 = student_forward(s, grid, shuffled);
  CHECK(k1.patches == k2.patches);
  CHECK(k1.patches != a.patches);
  CHECK_THROWS_AS(student_forward(s, grid, {64}), Error);
}

TEST_CASE("teacher: determinism, seed sensitivity, finiteness") {
  const auto c = StudentConfig::toy();
  const auto t1 = make_teacher(c, 41);
  const auto t2 = make_teacher(c, 42);
  std::mt19937_64 rng(43);
  const Tensor img = randn({1, 112, 112}, rng);
  const auto a = teacher_forward_image(img, t1);
  CHECK(a.patches == teacher_forward_image(img, t1).patches);
  CHECK(a.patches != teacher_forward_image(img, t2).patches);
  const auto z = teacher_forward(Tensor({32, 8, 8}), t1);
  CHECK(z.patches.all_finite());
  CHECK(z.cls.all_finite());
  CHECK(project_patches(a.patches, t1).shape == Shape{64, 16});
  CHECK_THROWS_AS(teacher_forward_image(Tensor({1, 100, 112}), t1), Error);
}

TEST_CASE("null test: teacher tokens through the student path give zero loss") {
  const auto c = StudentConfig::toy();
  const auto teacher = make_teacher(c, 51);
  const auto s = make_student(teacher, 52);
  std::mt19937_64 rng(53);
  const Tensor img = randn({1, 112, 112}, rng);
  const auto target = teacher_forward_image(img, teacher);
  // Identity embedder: hand the teacher's own patch tokens to the student's
  // backbone with its zero-init adapters and teacher-initialized final norm.
  const Tensor grid = teacher_embed(img, teacher);
  Tensor tokens({64, 32});
  for (int j = 0; j < 64; ++j)
    for (int k = 0; k < 32; ++k) tokens.at(j, k) = grid.at(k, j / 8, j % 8);
  ad::NoGradGuard g;
  const auto out = backbone_forward(ad::constant(tokens), all_tokens(64), *s.backbone, &s.lora, s.norm, &s.mask_token)
                       .detach();
  masking::PatchMask ones(8, 8, 1);
  const auto loss = distill::masked_distill_loss(out, target, ones, {});
  CHECK(loss.total == 0.0);
}
