#include "realm/distillation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "realm/error.hpp"
#include "realm/representation.hpp"
#include "realm/rng.hpp"

namespace realm::distill {

void LossWeights::validate() const {
  if (!(mse >= 0.0 && cos >= 0.0 && l1 >= 0.0))
    throw Error(ErrorCode::ConfigError, "loss weights must be non-negative");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw Error(ErrorCode::ConfigError, "epochs must be >= 0");
  if (micro_batch < 1 || accumulation < 1) throw Error(ErrorCode::ConfigError, "batch sizes must be >= 1");
  if (steps_per_epoch < 0) throw Error(ErrorCode::ConfigError, "steps_per_epoch must be >= 0");
  if (!(grad_clip_norm > 0.0)) throw Error(ErrorCode::ConfigError, "grad_clip_norm must be > 0");
  if (!(lr > 0.0)) throw Error(ErrorCode::ConfigError, "lr must be > 0");
  if (adam.weight_decay < 0.0) throw Error(ErrorCode::ConfigError, "weight_decay must be >= 0");
  if (!(dropout.rho >= 0.0 && dropout.rho < 1.0)) throw Error(ErrorCode::ConfigError, "dropout rho must be in [0, 1)");
  weights.validate();
  mask_schedule.validate();
}

TrainConfig TrainConfig::paper() { return TrainConfig{}; }

TrainConfig TrainConfig::paper_cosine() {
  TrainConfig c;
  c.lr = 1e-4;
  c.lr_schedule = optim::LrSchedule::Cosine;
  return c;
}

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.epochs = 50;
  c.micro_batch = 4;
  c.accumulation = 2;
  c.steps_per_epoch = 4;
  c.lr = 3e-3;
  c.seed = 7;
  return c;
}

namespace {

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw Error(ErrorCode::NonFiniteFeature, std::string(what) + " contains non-finite values");
}

std::vector<int> active_rows(const masking::PatchMask& mask, int tokens) {
  if (static_cast<int>(mask.size()) != tokens)
    throw Error(ErrorCode::ShapeMismatch, "mask has " + std::to_string(mask.size()) + " entries for " +
                                              std::to_string(tokens) + " tokens");
  std::vector<int> rows;
  for (int j = 0; j < tokens; ++j)
    if (mask.values[static_cast<std::size_t>(j)]) rows.push_back(j);
  if (rows.empty()) throw Error(ErrorCode::EmptyMask, "distillation mask is empty");
  return rows;
}

}  // namespace

LossVars masked_distill_loss(const model::LatentVars& student, const model::LatentFeatures& teacher,
                             const masking::PatchMask& mask, const LossWeights& w, bool include_cls) {
  const Tensor& sp = student.patches.value();
  if (sp.shape != teacher.patches.shape)
    throw Error(ErrorCode::ShapeMismatch,
                "patch features " + shape_str(sp.shape) + " vs " + shape_str(teacher.patches.shape));
  require_finite(sp, "student features");
  require_finite(teacher.patches, "teacher features");
  require_finite(student.cls.value(), "student CLS");
  require_finite(teacher.cls, "teacher CLS");
  const auto rows = active_rows(mask, sp.dim(0));
  const int d = sp.dim(1);

  Tensor target({static_cast<int>(rows.size()) + (include_cls ? 1 : 0), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = teacher.patches.row(rows[r]);
    std::copy(src.begin(), src.end(), target.row(static_cast<int>(r)).begin());
  }
  ad::Var zs = ad::gather_rows(student.patches, rows);
  if (include_cls) {
    std::copy(teacher.cls.data.begin(), teacher.cls.data.end(), target.row(static_cast<int>(rows.size())).begin());
    zs = ad::concat_rows({zs, student.cls});
  }
  const ad::Var zt = ad::constant(std::move(target));
  const ad::Var diff = ad::sub(zs, zt);
  const ad::Var mse = ad::scale(ad::sum_last(ad::square(diff)), 1.0 / d);
  const ad::Var l1 = ad::scale(ad::sum_last(ad::abs(diff)), 1.0 / d);
  const ad::Var cos = ad::add_scalar(ad::scale(ad::row_cosine(zs, zt, kCosineEps), -1.0), 1.0);
  const ad::Var per_row = ad::add(ad::add(ad::scale(mse, w.mse), ad::scale(cos, w.cos)), ad::scale(l1, w.l1));
  return {ad::mean(per_row), ad::mean(mse), ad::mean(cos), ad::mean(l1)};
}

LossBreakdown masked_distill_loss(const model::LatentFeatures& student, const model::LatentFeatures& teacher,
                                  const masking::PatchMask& mask, const LossWeights& w, bool include_cls) {
  ad::NoGradGuard guard;
  Tensor cls({1, static_cast<int>(student.cls.size())}, student.cls.data);
  model::LatentVars vars{ad::constant(std::move(cls)), ad::constant(student.patches)};
  return masked_distill_loss(vars, teacher, mask, w, include_cls).values();
}

DistillSample prepare_sample(const synth::PairedSample& sample, const model::TeacherParams& teacher) {
  const auto& g = teacher.geometry;
  const int side = g.input_size();
  const int h = sample.proxy_image.dim(1), wd = sample.proxy_image.dim(2);
  auto grid = repr::encode_voxel_grid(sample.events, g.in_bins, h, wd);
  grid = repr::normalize_voxel_grid(grid);
  if (h != side || wd != side) grid = repr::resize_center_crop(grid, side);
  DistillSample out;
  out.voxels = std::move(grid.values);
  out.target = model::teacher_forward_image(sample.proxy_image, teacher);
  out.base_mask = sample.base_mask;
  if (static_cast<int>(out.base_mask.size()) != g.tokens())
    throw Error(ErrorCode::ShapeMismatch, "base mask does not match the token grid");
  return out;
}

std::vector<DistillSample> prepare_samples(const std::vector<synth::PairedSample>& data,
                                           const model::TeacherParams& teacher) {
  std::vector<DistillSample> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(prepare_sample(s, teacher));
  return out;
}

TrainState::TrainState(model::Student s, const TrainConfig& config)
    : student(std::move(s)), optimizer(student.trainable(), config.adam) {}

StepMetrics train_step(TrainState& state, const std::vector<const DistillSample*>& batch, int epoch,
                       const TrainConfig& config, std::int64_t total_steps) {
  if (batch.empty()) throw Error(ErrorCode::EmptyBatch, "train_step needs at least one sample");
  const auto& geom = state.student.config;
  const int tokens = geom.tokens();
  StepMetrics m;
  m.step = state.step;
  m.epoch = epoch;
  m.radius = config.mask_schedule.radius_at(epoch, state.step);

  std::vector<masking::PatchMask> masks;
  masks.reserve(batch.size());
  int used = 0;
  for (const auto* s : batch) {
    masks.push_back(masking::mask_at_epoch(s->base_mask, epoch, config.mask_schedule, state.step));
    if (masks.back().active() > 0) ++used;
  }
  m.used_samples = used;
  m.kept_tokens = tokens;
  state.optimizer.zero_grad();

  // Micro-batches run in order and each sample's graph is released right after
  // its backward pass, so the reduction order is fixed.
  const std::size_t micro = static_cast<std::size_t>(config.micro_batch);
  for (std::size_t begin = 0; begin < batch.size(); begin += micro) {
    const std::size_t end = std::min(batch.size(), begin + micro);
    for (std::size_t i = begin; i < end; ++i) {
      if (masks[i].active() == 0) continue;
      const std::uint64_t draw = static_cast<std::uint64_t>(state.step) * batch.size() + i;
      const auto kept = masking::sample_token_dropout(tokens, config.dropout, epoch, draw);
      m.kept_tokens = static_cast<int>(kept.size());
      model::ForwardOptions opts{true, derive_seed(config.seed, {0x10A5u, draw})};
      const auto out = model::student_forward(state.student, ad::constant(batch[i]->voxels), kept, opts);
      const auto loss = masked_distill_loss(out, batch[i]->target, masks[i], config.weights);
      const double inv = 1.0 / used;
      m.loss.total += loss.total.item() * inv;
      m.loss.mse += loss.mse.item() * inv;
      m.loss.cos += loss.cos.item() * inv;
      m.loss.l1 += loss.l1.item() * inv;
      ad::backward(loss.total, inv);
    }
  }

  if (used > 0) {
    m.grad_norm = optim::clip_grad_norm(state.optimizer.params(), config.grad_clip_norm);
    state.optimizer.step(optim::scheduled_lr(config.lr, config.lr_schedule, state.step, total_steps));
  }
  state.optimizer.zero_grad();
  ++state.step;
  return m;
}

GradCheckResult grad_check(const std::function<ad::Var()>& loss, std::vector<ad::Var> params, double eps,
                           int max_coords, std::uint64_t seed, double corrupt, double floor) {
  zero_grad(params);
  ad::backward(loss());
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < params[p].size(); ++i) coords.emplace_back(p, i);
  Rng rng(derive_seed(seed, {0x6C4Bu}));
  std::shuffle(coords.begin(), coords.end(), rng);
  if (max_coords >= 0 && coords.size() > static_cast<std::size_t>(max_coords))
    coords.resize(static_cast<std::size_t>(max_coords));

  GradCheckResult r;
  ad::NoGradGuard guard;
  for (const auto& [p, i] : coords) {
    double& v = params[p].mutable_value().data[i];
    const double saved = v;
    v = saved + eps;
    const double fp = loss().item();
    v = saved - eps;
    const double fm = loss().item();
    v = saved;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double analytic = params[p].grad()[i] * corrupt;
    const double err = std::abs(analytic - numeric);
    const double denom = std::max(std::abs(numeric), floor);
    r.max_abs_error = std::max(r.max_abs_error, err);
    r.max_rel_error = std::max(r.max_rel_error, err / denom);
    ++r.coordinates;
  }
  zero_grad(params);
  return r;
}

std::function<ad::Var()> sample_loss_fn(const model::Student& student, const DistillSample& sample,
                                        const masking::PatchMask& mask, const std::vector<int>& kept,
                                        const LossWeights& w, bool train, std::uint64_t dropout_seed) {
  return [&student, &sample, mask, kept, w, train, dropout_seed]() {
    const auto out = model::student_forward(student, ad::constant(sample.voxels), kept, {train, dropout_seed});
    return masked_distill_loss(out, sample.target, mask, w).total;
  };
}

LossBreakdown evaluate(const model::Student& student, const std::vector<DistillSample>& data, const LossWeights& w) {
  const int tokens = student.config.tokens();
  std::vector<int> all(static_cast<std::size_t>(tokens));
  std::iota(all.begin(), all.end(), 0);
  LossBreakdown acc;
  int used = 0;
  for (const auto& s : data) {
    if (s.skippable()) continue;
    const auto out = model::student_forward(student, s.voxels, all, {});
    const auto l = masked_distill_loss(out, s.target, s.base_mask, w);
    acc.total += l.total;
    acc.mse += l.mse;
    acc.cos += l.cos;
    acc.l1 += l.l1;
    ++used;
  }
  if (used == 0) throw Error(ErrorCode::EmptyBatch, "no sample with a non-empty mask to evaluate");
  acc.total /= used;
  acc.mse /= used;
  acc.cos /= used;
  acc.l1 /= used;
  return acc;
}

RunResult run_distillation(const TrainConfig& config, model::Student& student,
                           const std::vector<DistillSample>& data, std::int64_t max_steps,
                           const std::function<void(const StepMetrics&)>& on_step) {
  config.validate();
  if (data.empty()) throw Error(ErrorCode::EmptyBatch, "distillation needs at least one sample");
  RunResult result;
  result.initial_eval = evaluate(student, data, config.weights);

  const int eb = config.effective_batch();
  const int per_epoch = config.steps_per_epoch > 0
                            ? config.steps_per_epoch
                            : static_cast<int>((data.size() + static_cast<std::size_t>(eb) - 1) / eb);
  std::int64_t total = static_cast<std::int64_t>(per_epoch) * config.epochs;
  if (max_steps >= 0) total = std::min(total, max_steps);

  TrainState state(student, config);
  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < config.epochs && state.step < total; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, {0xE90Cu, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;
    for (int k = 0; k < per_epoch && state.step < total; ++k) {
      std::vector<const DistillSample*> batch;
      for (int i = 0; i < eb; ++i) batch.push_back(&data[order[cursor++ % order.size()]]);
      result.curve.push_back(train_step(state, batch, epoch, config, total));
      if (on_step) on_step(result.curve.back());
    }
  }
  student = state.student;
  result.steps = state.step;
  result.final_eval = evaluate(student, data, config.weights);
  return result;
}

std::string loss_csv(const std::vector<StepMetrics>& curve) {
  std::string out = "step,epoch,radius,kept_tokens,loss_total,loss_mse,loss_cos,loss_l1,grad_norm\n";
  char buf[320];
  for (const auto& m : curve) {
    std::snprintf(buf, sizeof buf, "%lld,%d,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(m.step),
                  m.epoch, m.radius, m.kept_tokens, m.loss.total, m.loss.mse, m.loss.cos, m.loss.l1, m.grad_norm);
    out += buf;
  }
  return out;
}

}  // namespace realm::distill
