#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "realm/masking.hpp"
#include "realm/model.hpp"
#include "realm/optim.hpp"
#include "realm/synthetic.hpp"

namespace realm::distill {

struct LossWeights {
  double mse = 0.1;
  double cos = 0.3;
  double l1 = 0.6;

  void validate() const;
};

struct LossBreakdown {
  double total = 0.0;
  double mse = 0.0;  ///< unweighted per-token means, averaged like `total`
  double cos = 0.0;
  double l1 = 0.0;
};

struct LossVars {
  ad::Var total, mse, cos, l1;

  LossBreakdown values() const { return {total.item(), mse.item(), cos.item(), l1.item()}; }
};

constexpr double kCosineEps = 1e-8;

/// Masked composite alignment loss. Only rows with mask = 1 enter the graph, so
/// features at mask-0 positions have no influence at all. The CLS pair adds one
/// unmasked term, giving total = (sum_j M_j t_j + t_cls) / (sum_j M_j + 1).
LossVars masked_distill_loss(const model::LatentVars& student, const model::LatentFeatures& teacher,
                             const masking::PatchMask& mask, const LossWeights& w, bool include_cls = true);
LossBreakdown masked_distill_loss(const model::LatentFeatures& student, const model::LatentFeatures& teacher,
                                  const masking::PatchMask& mask, const LossWeights& w, bool include_cls = true);

struct TrainConfig {
  int epochs = 30;
  int micro_batch = 64;
  int accumulation = 8;
  /// 0 derives ceil(dataset / effective_batch).
  int steps_per_epoch = 0;
  double grad_clip_norm = 1.0;
  double lr = 1e-3;
  optim::LrSchedule lr_schedule = optim::LrSchedule::Constant;
  optim::AdamW::Options adam{};
  LossWeights weights{};
  masking::MaskSchedule mask_schedule{};
  masking::DropoutSpec dropout{};
  std::uint64_t seed = 0;

  int effective_batch() const { return micro_batch * accumulation; }
  void validate() const;

  /// Effective batch 512, lr 1e-3 constant.
  static TrainConfig paper();
  /// Same, with lr 1e-4 under cosine decay.
  static TrainConfig paper_cosine();
  /// 200 steps on 32 synthetic samples, effective batch 8.
  static TrainConfig toy();
};

/// Cached per-sample inputs: normalized voxels and frozen teacher targets.
struct DistillSample {
  Tensor voxels;  ///< bins x S x S
  model::LatentFeatures target;
  masking::PatchMask base_mask;

  bool skippable() const { return base_mask.active() == 0; }
};

DistillSample prepare_sample(const synth::PairedSample& sample, const model::TeacherParams& teacher);
std::vector<DistillSample> prepare_samples(const std::vector<synth::PairedSample>& data,
                                           const model::TeacherParams& teacher);

struct TrainState {
  model::Student student;
  optim::AdamW optimizer;
  std::int64_t step = 0;

  TrainState(model::Student s, const TrainConfig& config);
};

struct StepMetrics {
  std::int64_t step = 0;
  int epoch = 0;
  int radius = 0;
  int kept_tokens = 0;
  int used_samples = 0;
  LossBreakdown loss{};  ///< mean over non-skipped samples
  double grad_norm = 0.0;  ///< before clipping
};

/// One optimizer update over `batch` (split into micro-batches of
/// config.micro_batch). Empty-mask samples are skipped and the objective is the
/// mean over the remaining ones.
StepMetrics train_step(TrainState& state, const std::vector<const DistillSample*>& batch, int epoch,
                       const TrainConfig& config, std::int64_t total_steps);

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  int coordinates = 0;
};

/// Central-difference check of the gradients of `loss` with respect to up to
/// `max_coords` coordinates sampled from `params`. The analytic gradient is
/// multiplied by `corrupt` before comparison (1 for a real check).
/// Relative error is |a - n| / max(|n|, floor), so a doubled gradient reads as 1.
GradCheckResult grad_check(const std::function<ad::Var()>& loss, std::vector<ad::Var> params, double eps,
                           int max_coords, std::uint64_t seed, double corrupt = 1.0, double floor = 1e-6);

/// Loss closure for one sample with a fixed token subset and LoRA dropout seed.
std::function<ad::Var()> sample_loss_fn(const model::Student& student, const DistillSample& sample,
                                        const masking::PatchMask& mask, const std::vector<int>& kept,
                                        const LossWeights& w, bool train, std::uint64_t dropout_seed);

/// Mean masked loss on base masks, all tokens kept, no adapter dropout.
LossBreakdown evaluate(const model::Student& student, const std::vector<DistillSample>& data, const LossWeights& w);

struct RunResult {
  std::vector<StepMetrics> curve;
  LossBreakdown initial_eval{};
  LossBreakdown final_eval{};
  std::int64_t steps = 0;
};

/// Full loop: per-epoch seeded shuffle, curriculum, dropout schedule. Updates
/// `student` in place.
RunResult run_distillation(const TrainConfig& config, model::Student& student,
                           const std::vector<DistillSample>& data, std::int64_t max_steps = -1,
                           const std::function<void(const StepMetrics&)>& on_step = {});

std::string loss_csv(const std::vector<StepMetrics>& curve);

}  // namespace realm::distill
