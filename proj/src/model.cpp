#include "realm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "realm/error.hpp"
#include "realm/rng.hpp"

namespace realm::model {

namespace {

enum Tag : std::uint64_t {
  kTagTeacherEmbed = 1,
  kTagBackbone,
  kTagNorm,
  kTagProjector,
  kTagEmbedder,
  kTagLora,
  kTagMaskToken,
};

Tensor normal(Shape shape, double mean, double sd, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(mean, sd);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

ad::Var frozen(Tensor t) { return ad::constant(std::move(t)); }
ad::Var trainable(Tensor t) { return ad::parameter(std::move(t)); }

Linear frozen_linear(int in, int out, double w_sd, double b_sd, Rng& rng) {
  return {frozen(normal({out, in}, 0.0, w_sd, rng)), frozen(normal({out}, 0.0, b_sd, rng))};
}

Conv trainable_conv(int in, int out, int k, int stride, int pad, Rng& rng) {
  const double sd = std::sqrt(2.0 / (in * k * k));
  return {trainable(normal({out, in, k, k}, 0.0, sd, rng)), trainable(Tensor({out})), stride, pad};
}

ad::Var apply_conv(const ad::Var& x, const Conv& c) { return ad::conv2d(x, c.w, &c.b, c.stride, c.pad); }

ad::Var dropout_input(const ad::Var& x, double p, std::uint64_t seed) {
  if (p <= 0.0) return x;
  Rng rng(seed);
  std::bernoulli_distribution keep(1.0 - p);
  Tensor m(x.shape());
  const double s = 1.0 / (1.0 - p);
  for (auto& v : m.data) v = keep(rng) ? s : 0.0;
  return ad::mul(x, ad::constant(std::move(m)));
}

ad::Var adapted_linear(const ad::Var& x, const Linear& lin, const std::optional<LoRAAdapter>* adapter,
                       const ForwardOptions& opts, std::uint64_t site) {
  ad::Var y = ad::linear(x, lin.w, &lin.b);
  if (adapter && adapter->has_value()) {
    const auto& ad_ = **adapter;
    ad::Var xin = opts.train ? dropout_input(x, ad_.dropout, derive_seed(opts.dropout_seed, {site})) : x;
    y = ad::add(y, ad::scale(ad::matmul(ad::matmul(xin, ad_.a), ad_.b), ad_.scale));
  }
  return y;
}

ad::Var block_forward(const ad::Var& x, const Block& blk, int heads, double eps,
                      const std::array<std::optional<LoRAAdapter>, 4>* lora, const ForwardOptions& opts,
                      std::uint64_t layer) {
  auto site = [&](int i) { return layer * 4 + static_cast<std::uint64_t>(i); };
  auto ad_at = [&](int i) { return lora ? &(*lora)[i] : nullptr; };
  const int d = x.dim(1);
  const int dh = d / heads;

  ad::Var h = ad::layer_norm(x, blk.ln1_g, blk.ln1_b, eps);
  ad::Var qkv = adapted_linear(h, blk.qkv, ad_at(0), opts, site(0));
  std::vector<ad::Var> outs;
  outs.reserve(heads);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int hd = 0; hd < heads; ++hd) {
    ad::Var q = ad::slice_cols(qkv, hd * dh, dh);
    ad::Var k = ad::slice_cols(qkv, d + hd * dh, dh);
    ad::Var v = ad::slice_cols(qkv, 2 * d + hd * dh, dh);
    ad::Var att = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), inv));
    outs.push_back(ad::matmul(att, v));
  }
  ad::Var a = adapted_linear(ad::concat_cols(outs), blk.proj, ad_at(1), opts, site(1));
  ad::Var x1 = ad::add(x, ad::mul_row(a, blk.ls1));

  ad::Var h2 = ad::layer_norm(x1, blk.ln2_g, blk.ln2_b, eps);
  ad::Var f = ad::gelu(adapted_linear(h2, blk.fc1, ad_at(2), opts, site(2)));
  f = adapted_linear(f, blk.fc2, ad_at(3), opts, site(3));
  return ad::add(x1, ad::mul_row(f, blk.ls2));
}

FinalNorm clone_norm_trainable(const FinalNorm& n) {
  return {trainable(n.gamma.value()), trainable(n.beta.value())};
}

}  // namespace

StudentConfig StudentConfig::toy() { return StudentConfig{}; }

StudentConfig StudentConfig::paper() {
  StudentConfig c;
  c.d = 768;
  c.grid = 32;
  c.layers = 12;
  c.heads = 12;
  c.mlp_ratio = 4.0;
  c.lora_rank = 32;
  c.lora_alpha = 64.0;
  c.lora_dropout = 0.10;
  c.lora_targets = kAllTargets;
  c.in_bins = 5;
  c.patch = 14;
  c.embed_base = 64;
  c.d_proj = 1024;
  return c;
}

void StudentConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigError, m); };
  if (d < 1 || grid < 1 || layers < 0 || heads < 1) fail("model geometry must be positive");
  if (d % heads != 0) fail("token width d must be divisible by heads");
  if (lora_rank < 1) fail("lora rank must be >= 1");
  if (!(lora_dropout >= 0.0 && lora_dropout < 1.0)) fail("lora dropout must lie in [0, 1)");
  if (in_bins < 1 || patch < 1 || embed_base < 1 || d_proj < 1) fail("embedder geometry must be positive");
  if (mlp_ratio <= 0) fail("mlp_ratio must be positive");
}

LatentFeatures LatentVars::detach() const {
  LatentFeatures f;
  f.cls = Tensor({cls.dim(1)}, cls.value().data);
  f.patches = patches.value();
  return f;
}

std::vector<ad::Var> Student::trainable() const {
  std::vector<ad::Var> out;
  for (auto& [_, v] : named_embedder(embedder)) out.push_back(v);
  for (auto& [_, v] : named_lora(lora)) out.push_back(v);
  out.push_back(norm.gamma);
  out.push_back(norm.beta);
  out.push_back(mask_token);
  return out;
}

TeacherParams make_teacher(const StudentConfig& c, std::uint64_t seed) {
  c.validate();
  TeacherParams t;
  t.geometry = c;
  t.seed = seed;
  const int d = c.d, hid = c.mlp_hidden(), m = c.tokens();

  Rng er(derive_seed(seed, {kTagTeacherEmbed}));
  t.patch_embed = {frozen(normal({d, 1, c.patch, c.patch}, 0.0, 1.0 / c.patch, er)),
                   frozen(normal({d}, 0.0, 0.1, er)), c.patch, 0};

  Rng br(derive_seed(seed, {kTagBackbone}));
  auto bb = std::make_shared<Backbone>();
  bb->heads = c.heads;
  bb->ln_eps = c.ln_eps;
  bb->cls = frozen(normal({1, d}, 0.0, 0.5, br));
  bb->pos = frozen(normal({m + 1, d}, 0.0, 0.5, br));
  const double sd_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double sd_h = 1.0 / std::sqrt(static_cast<double>(hid));
  for (int l = 0; l < c.layers; ++l) {
    Block b;
    b.ln1_g = frozen(normal({d}, 1.0, 0.1, br));
    b.ln1_b = frozen(normal({d}, 0.0, 0.1, br));
    b.qkv = frozen_linear(d, 3 * d, sd_d, 0.02, br);
    b.proj = frozen_linear(d, d, sd_d, 0.02, br);
    b.ls1 = frozen(uniform({d}, 0.3, 0.7, br));
    b.ln2_g = frozen(normal({d}, 1.0, 0.1, br));
    b.ln2_b = frozen(normal({d}, 0.0, 0.1, br));
    b.fc1 = frozen_linear(d, hid, sd_d, 0.02, br);
    b.fc2 = frozen_linear(hid, d, sd_h, 0.02, br);
    b.ls2 = frozen(uniform({d}, 0.3, 0.7, br));
    bb->blocks.push_back(std::move(b));
  }
  t.backbone = std::move(bb);

  Rng nr(derive_seed(seed, {kTagNorm}));
  t.norm = {frozen(normal({d}, 1.0, 0.1, nr)), frozen(normal({d}, 0.0, 0.1, nr))};

  Rng pr(derive_seed(seed, {kTagProjector}));
  t.projector = {frozen(normal({c.d_proj, d}, 0.0, sd_d, pr)), frozen(Tensor({c.d_proj}))};
  return t;
}

EmbedderParams make_embedder(const StudentConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(derive_seed(seed, {kTagEmbedder}));
  EmbedderParams e;
  e.grid = c.grid;
  e.stem = trainable_conv(c.in_bins, c.embed_base, 7, 2, 3, rng);
  int ch = c.embed_base;
  for (auto& st : e.stages) {
    st.conv1 = trainable_conv(ch, 2 * ch, 3, 2, 1, rng);
    st.conv2 = trainable_conv(2 * ch, 2 * ch, 3, 1, 1, rng);
    st.skip = trainable_conv(ch, 2 * ch, 1, 2, 0, rng);
    ch *= 2;
  }
  Conv proj = trainable_conv(ch, c.d, 1, 1, 0, rng);
  e.proj = std::move(proj);
  return e;
}

Student make_student(const TeacherParams& teacher, std::uint64_t seed) {
  const auto& c = teacher.geometry;
  Student s;
  s.config = c;
  s.backbone = teacher.backbone;
  s.embedder = make_embedder(c, seed);
  s.norm = clone_norm_trainable(teacher.norm);

  Rng lr(derive_seed(seed, {kTagLora}));
  s.lora.resize(teacher.backbone->blocks.size());
  for (std::size_t l = 0; l < s.lora.size(); ++l) {
    const Block& b = teacher.backbone->blocks[l];
    const Linear* targets[4] = {&b.qkv, &b.proj, &b.fc1, &b.fc2};
    for (int i = 0; i < 4; ++i) {
      if (!(c.lora_targets & (1u << i))) continue;
      const int in = targets[i]->in(), out = targets[i]->out();
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      s.lora[l][i] = LoRAAdapter{trainable(uniform({in, c.lora_rank}, -bound, bound, lr)),
                                 trainable(Tensor({c.lora_rank, out})), c.lora_scale(), c.lora_dropout};
    }
  }
  Rng mr(derive_seed(seed, {kTagMaskToken}));
  s.mask_token = trainable(normal({c.d}, 0.0, 0.02, mr));
  return s;
}

ad::Var embed_voxels(const ad::Var& grid, const EmbedderParams& p) {
  if (grid.value().rank() != 3 || grid.dim(0) != p.stem.w.dim(1)) {
    throw Error(ErrorCode::ShapeMismatch, "voxel grid " + shape_str(grid.shape()) + " does not match stem with " +
                                              std::to_string(p.stem.w.dim(1)) + " input bins");
  }
  ad::Var x = ad::gelu(apply_conv(grid, p.stem));
  for (const auto& st : p.stages) {
    ad::Var main = ad::gelu(apply_conv(x, st.conv1));
    main = apply_conv(main, st.conv2);
    x = ad::gelu(ad::add(main, apply_conv(x, st.skip)));
  }
  x = apply_conv(x, p.proj);
  x = ad::adaptive_avg_pool2d(x, p.grid, p.grid);
  const int d = x.dim(0);
  return ad::transpose(ad::reshape(x, {d, p.grid * p.grid}));
}

Tensor embed_voxels(const Tensor& grid, const EmbedderParams& params) {
  ad::NoGradGuard guard;
  return embed_voxels(ad::constant(grid), params).value();
}

LatentVars backbone_forward(const ad::Var& tokens, const std::vector<int>& kept, const Backbone& bb,
                            const LoraSet* adapters, const FinalNorm& norm, const ad::Var* mask_token,
                            const ForwardOptions& opts) {
  const int d = bb.cls.dim(1);
  const int m = bb.pos.dim(0) - 1;
  if (tokens.value().rank() != 2 || tokens.dim(0) != m || tokens.dim(1) != d) {
    throw Error(ErrorCode::ShapeMismatch,
                "tokens " + shape_str(tokens.shape()) + " vs backbone " + std::to_string(m) + "x" + std::to_string(d));
  }
  if (adapters && adapters->size() != bb.blocks.size())
    throw Error(ErrorCode::ShapeMismatch, "adapter set does not match block count");
  std::vector<bool> keep(static_cast<std::size_t>(m), false);
  for (int k : kept) {
    if (k < 0 || k >= m) throw Error(ErrorCode::ShapeMismatch, "kept index " + std::to_string(k) + " out of range");
    keep[k] = true;
  }
  ad::Var x = tokens;
  const bool all_kept = std::all_of(keep.begin(), keep.end(), [](bool b) { return b; });
  if (!all_kept) {
    if (!mask_token) throw Error(ErrorCode::InvalidArgument, "token dropout requires a mask token");
    x = ad::substitute_rows(x, *mask_token, keep);
  }
  x = ad::add(ad::concat_rows({bb.cls, x}), bb.pos);
  for (std::size_t l = 0; l < bb.blocks.size(); ++l)
    x = block_forward(x, bb.blocks[l], bb.heads, bb.ln_eps, adapters ? &(*adapters)[l] : nullptr, opts, l);
  x = ad::layer_norm(x, norm.gamma, norm.beta, bb.ln_eps);

  std::vector<int> patch_rows(static_cast<std::size_t>(m));
  std::iota(patch_rows.begin(), patch_rows.end(), 1);
  const int zero = 0;
  return {ad::gather_rows(x, std::span<const int>(&zero, 1)), ad::gather_rows(x, patch_rows)};
}

LatentVars student_forward(const Student& s, const ad::Var& voxel_grid, const std::vector<int>& kept,
                           const ForwardOptions& opts) {
  ad::Var tokens = embed_voxels(voxel_grid, s.embedder);
  return backbone_forward(tokens, kept, *s.backbone, &s.lora, s.norm, &s.mask_token, opts);
}

LatentFeatures student_forward(const Student& s, const Tensor& voxel_grid, const std::vector<int>& kept,
                               const ForwardOptions& opts) {
  ad::NoGradGuard guard;
  return student_forward(s, ad::constant(voxel_grid), kept, opts).detach();
}

Tensor teacher_embed(const Tensor& image, const TeacherParams& t) {
  const int side = t.geometry.input_size();
  if (image.rank() != 3 || image.dim(0) != 1 || image.dim(1) != side || image.dim(2) != side) {
    throw Error(ErrorCode::ShapeMismatch, "teacher expects a 1x" + std::to_string(side) + "x" + std::to_string(side) +
                                              " image, got " + shape_str(image.shape));
  }
  ad::NoGradGuard guard;
  return apply_conv(ad::constant(image), t.patch_embed).value();
}

LatentFeatures teacher_forward(const Tensor& token_grid, const TeacherParams& t) {
  const int d = t.geometry.d, g = t.geometry.grid;
  if (token_grid.rank() != 3 || token_grid.dim(0) != d || token_grid.dim(1) != g || token_grid.dim(2) != g) {
    throw Error(ErrorCode::ShapeMismatch, "teacher expects a " + std::to_string(d) + "x" + std::to_string(g) + "x" +
                                              std::to_string(g) + " token grid, got " + shape_str(token_grid.shape));
  }
  ad::NoGradGuard guard;
  ad::Var tokens = ad::transpose(ad::reshape(ad::constant(token_grid), {d, g * g}));
  std::vector<int> all(static_cast<std::size_t>(g * g));
  std::iota(all.begin(), all.end(), 0);
  return backbone_forward(tokens, all, *t.backbone, nullptr, t.norm, nullptr).detach();
}

LatentFeatures teacher_forward_image(const Tensor& image, const TeacherParams& t) {
  return teacher_forward(teacher_embed(image, t), t);
}

Tensor project_patches(const Tensor& patches, const TeacherParams& t) {
  ad::NoGradGuard guard;
  return ad::linear(ad::constant(patches), t.projector.w, &t.projector.b).value();
}

Tensor lora_merge(const Linear& base, const LoRAAdapter& adapter) {
  const int in = base.in(), out = base.out(), r = adapter.rank();
  if (adapter.a.dim(0) != in || adapter.b.dim(1) != out || adapter.b.dim(0) != r)
    throw Error(ErrorCode::ShapeMismatch, "adapter does not match weight " + shape_str(base.w.shape()));
  Tensor merged = base.w.value();
  for (int o = 0; o < out; ++o)
    for (int i = 0; i < in; ++i) {
      double s = 0.0;
      for (int k = 0; k < r; ++k) s += adapter.a.value().at(i, k) * adapter.b.value().at(k, o);
      merged.at(o, i) += adapter.scale * s;
    }
  return merged;
}

std::shared_ptr<Backbone> merge_adapters(const Student& s) {
  auto out = std::make_shared<Backbone>();
  out->heads = s.backbone->heads;
  out->ln_eps = s.backbone->ln_eps;
  out->cls = ad::constant(s.backbone->cls.value());
  out->pos = ad::constant(s.backbone->pos.value());
  for (std::size_t l = 0; l < s.backbone->blocks.size(); ++l) {
    Block b = s.backbone->blocks[l];
    Linear* targets[4] = {&b.qkv, &b.proj, &b.fc1, &b.fc2};
    for (int i = 0; i < 4; ++i) {
      const auto& adapter = s.lora[l][i];
      if (!adapter) continue;
      targets[i]->w = ad::constant(lora_merge(*targets[i], *adapter));
    }
    out->blocks.push_back(std::move(b));
  }
  return out;
}

ParamCounts count_params(const StudentConfig& c, int depth_bins, int seg_classes) {
  using I = std::int64_t;
  ParamCounts pc;
  auto conv = [](I in, I out, I k) { return in * out * k * k + out; };
  I ch = c.embed_base;
  pc.embedder = conv(c.in_bins, ch, 7);
  for (int s = 0; s < 3; ++s) {
    pc.embedder += conv(ch, 2 * ch, 3) + conv(2 * ch, 2 * ch, 3) + conv(ch, 2 * ch, 1);
    ch *= 2;
  }
  pc.embedder += conv(ch, c.d, 1);

  const I d = c.d, h = c.mlp_hidden(), m = c.tokens();
  const I per_block = 4 * d                 // two layer norms
                      + (d * 3 * d + 3 * d)  // qkv
                      + (d * d + d)          // proj
                      + (d * h + h)          // fc1
                      + (h * d + d)          // fc2
                      + 2 * d;               // layer scale
  pc.backbone = c.layers * per_block + d /*cls*/ + (m + 1) * d /*pos*/ + d /*mask token*/ + 2 * d /*norm*/;

  const std::pair<I, I> shapes[4] = {{d, 3 * d}, {d, d}, {d, h}, {h, d}};
  for (int i = 0; i < 4; ++i)
    if (c.lora_targets & (1u << i)) pc.lora += c.layers * c.lora_rank * (shapes[i].first + shapes[i].second);

  pc.depth_head = 2 * (d * depth_bins + depth_bins);
  pc.seg_head = static_cast<I>(c.d_proj) * seg_classes + seg_classes;
  pc.projector = d * c.d_proj + c.d_proj;
  pc.teacher_patch_embed = static_cast<I>(c.patch) * c.patch * d + d;
  return pc;
}

std::int64_t count_elements(const std::vector<ad::Var>& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += static_cast<std::int64_t>(p.size());
  return n;
}

NamedVars named_embedder(const EmbedderParams& p) {
  NamedVars out;
  auto conv = [&](const std::string& name, const Conv& c) {
    out.emplace_back(name + ".w", c.w);
    out.emplace_back(name + ".b", c.b);
  };
  conv("stem", p.stem);
  for (std::size_t s = 0; s < p.stages.size(); ++s) {
    const std::string pre = "stage" + std::to_string(s);
    conv(pre + ".conv1", p.stages[s].conv1);
    conv(pre + ".conv2", p.stages[s].conv2);
    conv(pre + ".skip", p.stages[s].skip);
  }
  conv("proj", p.proj);
  return out;
}

NamedVars named_backbone(const Backbone& b) {
  NamedVars out{{"cls", b.cls}, {"pos", b.pos}};
  for (std::size_t l = 0; l < b.blocks.size(); ++l) {
    const auto& k = b.blocks[l];
    const std::string p = "block" + std::to_string(l) + ".";
    out.insert(out.end(), {{p + "ln1.g", k.ln1_g}, {p + "ln1.b", k.ln1_b}, {p + "qkv.w", k.qkv.w},
                           {p + "qkv.b", k.qkv.b}, {p + "proj.w", k.proj.w}, {p + "proj.b", k.proj.b},
                           {p + "ls1", k.ls1}, {p + "ln2.g", k.ln2_g}, {p + "ln2.b", k.ln2_b},
                           {p + "fc1.w", k.fc1.w}, {p + "fc1.b", k.fc1.b}, {p + "fc2.w", k.fc2.w},
                           {p + "fc2.b", k.fc2.b}, {p + "ls2", k.ls2}});
  }
  return out;
}

NamedVars named_lora(const LoraSet& lora) {
  static constexpr const char* kNames[4] = {"qkv", "proj", "fc1", "fc2"};
  NamedVars out;
  for (std::size_t l = 0; l < lora.size(); ++l)
    for (int i = 0; i < 4; ++i) {
      if (!lora[l][i]) continue;
      const std::string p = "block" + std::to_string(l) + "." + kNames[i];
      out.emplace_back(p + ".A", lora[l][i]->a);
      out.emplace_back(p + ".B", lora[l][i]->b);
    }
  return out;
}

NamedVars named_norm(const FinalNorm& n) { return {{"gamma", n.gamma}, {"beta", n.beta}}; }

NamedVars named_teacher_extras(const TeacherParams& t) {
  return {{"patch_embed.w", t.patch_embed.w}, {"patch_embed.b", t.patch_embed.b},
          {"norm.gamma", t.norm.gamma},       {"norm.beta", t.norm.beta},
          {"projector.w", t.projector.w},     {"projector.b", t.projector.b}};
}

}  // namespace realm::model
