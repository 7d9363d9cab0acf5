#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "realm/autodiff.hpp"
#include "realm/tensor.hpp"

namespace realm::model {

enum LoraTarget : unsigned {
  kQkv = 1u << 0,
  kProj = 1u << 1,
  kFc1 = 1u << 2,
  kFc2 = 1u << 3,
  kAllTargets = kQkv | kProj | kFc1 | kFc2,
};

/// Token geometry and adapter hyper-parameters. `toy()` runs in seconds;
/// `paper()` is the ViT-B/14 layout used for shape and count checks.
struct StudentConfig {
  int d = 32;
  int grid = 8;
  int layers = 2;
  int heads = 4;
  double mlp_ratio = 4.0;
  int lora_rank = 4;
  double lora_alpha = 8.0;
  double lora_dropout = 0.10;
  unsigned lora_targets = kAllTargets;
  int in_bins = 5;
  int patch = 14;
  int embed_base = 8;
  int d_proj = 16;
  double ln_eps = 1e-6;

  static StudentConfig toy();
  static StudentConfig paper();

  int tokens() const { return grid * grid; }
  int input_size() const { return grid * patch; }
  int mlp_hidden() const { return static_cast<int>(d * mlp_ratio); }
  double lora_scale() const { return lora_alpha / lora_rank; }
  void validate() const;
};

struct Linear {
  ad::Var w;  ///< [out x in]
  ad::Var b;  ///< [out]

  int in() const { return w.dim(1); }
  int out() const { return w.dim(0); }
};

struct Conv {
  ad::Var w;  ///< [out x in x k x k]
  ad::Var b;  ///< [out]
  int stride = 1;
  int pad = 0;
};

/// Low-rank update on a frozen Linear: y = W x + scale * (drop(x) A) B.
struct LoRAAdapter {
  ad::Var a;  ///< [in x r], trainable
  ad::Var b;  ///< [r x out], trainable, zero at init
  double scale = 1.0;
  double dropout = 0.0;

  int rank() const { return a.dim(1); }
};

struct Block {
  ad::Var ln1_g, ln1_b;
  Linear qkv, proj;
  ad::Var ls1;
  ad::Var ln2_g, ln2_b;
  Linear fc1, fc2;
  ad::Var ls2;
};

/// Frozen transformer shared by teacher and student.
struct Backbone {
  ad::Var cls;  ///< [1 x d]
  ad::Var pos;  ///< [(M + 1) x d]
  std::vector<Block> blocks;
  int heads = 1;
  double ln_eps = 1e-6;
};

struct FinalNorm {
  ad::Var gamma, beta;
};

struct TeacherParams {
  StudentConfig geometry;
  std::shared_ptr<Backbone> backbone;
  FinalNorm norm;
  Conv patch_embed;  ///< 1-channel image -> d, kernel = stride = patch
  Linear projector;  ///< d -> d_proj
  std::uint64_t seed = 0;
};

struct ResidualStage {
  Conv conv1;  ///< 3x3, stride 2, c -> 2c
  Conv conv2;  ///< 3x3, stride 1
  Conv skip;   ///< 1x1, stride 2
};

struct EmbedderParams {
  Conv stem;  ///< 7x7, stride 2, bins -> base
  std::array<ResidualStage, 3> stages;
  Conv proj;  ///< 1x1 -> d
  int grid = 8;
};

/// Per block, one optional adapter for each of qkv / proj / fc1 / fc2.
using LoraSet = std::vector<std::array<std::optional<LoRAAdapter>, 4>>;

struct Student {
  StudentConfig config;
  std::shared_ptr<const Backbone> backbone;
  EmbedderParams embedder;
  LoraSet lora;
  FinalNorm norm;
  ad::Var mask_token;  ///< [d]

  /// Embedder, LoRA factors, final norm, mask token.
  std::vector<ad::Var> trainable() const;
};

struct LatentFeatures {
  Tensor cls;      ///< [d]
  Tensor patches;  ///< [M x d]
};

/// Differentiable counterpart of LatentFeatures.
struct LatentVars {
  ad::Var cls;      ///< [1 x d]
  ad::Var patches;  ///< [M x d]

  LatentFeatures detach() const;
};

struct ForwardOptions {
  bool train = false;
  std::uint64_t dropout_seed = 0;
};

TeacherParams make_teacher(const StudentConfig& config, std::uint64_t seed);
EmbedderParams make_embedder(const StudentConfig& config, std::uint64_t seed);
Student make_student(const TeacherParams& teacher, std::uint64_t seed);

/// [bins x H x W] -> [M x d].
ad::Var embed_voxels(const ad::Var& grid, const EmbedderParams& params);
Tensor embed_voxels(const Tensor& grid, const EmbedderParams& params);

/// Runs the frozen transformer on patch tokens [M x d]. Positions absent from
/// `kept` are replaced by `mask_token` first; `adapters` may be null.
LatentVars backbone_forward(const ad::Var& tokens, const std::vector<int>& kept, const Backbone& backbone,
                            const LoraSet* adapters, const FinalNorm& norm, const ad::Var* mask_token,
                            const ForwardOptions& opts = {});

LatentVars student_forward(const Student& student, const ad::Var& voxel_grid, const std::vector<int>& kept,
                           const ForwardOptions& opts = {});
LatentFeatures student_forward(const Student& student, const Tensor& voxel_grid, const std::vector<int>& kept,
                               const ForwardOptions& opts = {});

/// 1 x H x W intensity image -> d x G x G token grid.
Tensor teacher_embed(const Tensor& image, const TeacherParams& teacher);
/// d x G x G token grid -> normalized CLS + patch tokens.
LatentFeatures teacher_forward(const Tensor& token_grid, const TeacherParams& teacher);
LatentFeatures teacher_forward_image(const Tensor& image, const TeacherParams& teacher);

/// Applies the frozen teacher projector to patch tokens: [M x d] -> [M x d_proj].
Tensor project_patches(const Tensor& patches, const TeacherParams& teacher);

/// W + scale * (A B)^T, so that merged linear forward equals the adapted one.
Tensor lora_merge(const Linear& base, const LoRAAdapter& adapter);
/// Copy of `student.lora` folded into the weights; returns a backbone without adapters.
std::shared_ptr<Backbone> merge_adapters(const Student& student);

struct ParamCounts {
  std::int64_t embedder = 0;
  std::int64_t backbone = 0;  ///< frozen encoder incl. cls, pos, mask token, final norm
  std::int64_t lora = 0;
  std::int64_t depth_head = 0;
  std::int64_t seg_head = 0;
  std::int64_t projector = 0;
  std::int64_t teacher_patch_embed = 0;

  std::int64_t student_total() const { return embedder + backbone + lora; }
  std::int64_t trainable() const { return embedder + lora; }
};

ParamCounts count_params(const StudentConfig& config, int depth_bins = 256, int seg_classes = 11);

/// Counts elements of actually-constructed parameters.
std::int64_t count_elements(const std::vector<ad::Var>& params);

using NamedVars = std::vector<std::pair<std::string, ad::Var>>;
NamedVars named_embedder(const EmbedderParams& p);
NamedVars named_backbone(const Backbone& b);
NamedVars named_lora(const LoraSet& lora);
NamedVars named_norm(const FinalNorm& n);
NamedVars named_teacher_extras(const TeacherParams& t);

}  // namespace realm::model
