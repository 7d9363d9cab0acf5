#include "realm/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "realm/error.hpp"
#include "realm/optim.hpp"
#include "realm/rng.hpp"

namespace realm::heads {

std::vector<double> DepthBins::centers() const {
  validate();
  std::vector<double> c(static_cast<std::size_t>(count));
  const double span = d_max - d_min;
  for (int i = 0; i < count; ++i) c[static_cast<std::size_t>(i)] = d_min + (span * i) / (count - 1);
  c.back() = d_max;
  return c;
}

void DepthBins::validate() const {
  if (count < 2 || !(d_max > d_min)) throw Error(ErrorCode::InvalidArgument, "depth bins need count >= 2 and d_max > d_min");
}

std::vector<double> default_class_weights() { return {1.0, 1.0, 5.0, 5.0, 5.0, 1.0, 3.0, 2.0, 2.5, 10.0, 15.0}; }

namespace {

Tensor normal_tensor(Shape shape, double sd, Rng& rng) {
  Tensor t(std::move(shape));
  if (sd > 0.0) {
    std::normal_distribution<double> n(0.0, sd);
    for (auto& v : t.data) v = n(rng);
  }
  return t;
}

model::LatentVars as_vars(const model::LatentFeatures& f) {
  return {ad::constant(Tensor({1, static_cast<int>(f.cls.size())}, f.cls.data)), ad::constant(f.patches)};
}

int square_grid(int tokens) {
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(tokens))));
  if (g * g != tokens) throw Error(ErrorCode::ShapeMismatch, "patch grid is not square: " + std::to_string(tokens));
  return g;
}

/// [M x K] token logits -> [K x G x G].
ad::Var tokens_to_grid(const ad::Var& t) {
  const int g = square_grid(t.dim(0));
  return ad::reshape(ad::transpose(t), {t.dim(1), g, g});
}

ad::Var gather_flat(const ad::Var& x, const std::vector<int>& idx) {
  return ad::gather_rows(ad::reshape(x, {static_cast<int>(x.size()), 1}), idx);
}

std::vector<int> valid_indices(const std::vector<std::uint8_t>& valid) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < valid.size(); ++i)
    if (valid[i]) idx.push_back(static_cast<int>(i));
  return idx;
}

/// Labeled pixel indices and their classes; rejects ids outside [0, C).
std::pair<std::vector<int>, std::vector<int>> labeled_pixels(const Tensor& labels, int classes) {
  std::vector<int> idx, cls;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = labels.data[i];
    if (v == kIgnoreLabel) continue;
    const int c = static_cast<int>(v);
    if (c < 0 || c >= classes || c != v)
      throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(v) + " outside [0, " + std::to_string(classes) + ")");
    idx.push_back(static_cast<int>(i));
    cls.push_back(c);
  }
  if (idx.empty()) throw Error(ErrorCode::NoValidPixels, "no labeled pixels");
  return {idx, cls};
}

/// [C x H x W] logits -> [n x C] rows for the labeled pixels.
ad::Var pixel_logits(const ad::Var& logits, const Tensor& labels, const std::vector<int>& idx) {
  if (logits.value().rank() != 3 || labels.rank() != 2 || logits.dim(1) != labels.dim(0) ||
      logits.dim(2) != labels.dim(1))
    throw Error(ErrorCode::ShapeMismatch, "logits " + shape_str(logits.shape()) + " vs labels " + shape_str(labels.shape));
  const int c = logits.dim(0);
  const auto rows = ad::transpose(ad::reshape(logits, {c, logits.dim(1) * logits.dim(2)}));
  return ad::gather_rows(rows, idx);
}

Tensor one_hot(const std::vector<int>& cls, int classes) {
  Tensor t({static_cast<int>(cls.size()), classes});
  for (std::size_t i = 0; i < cls.size(); ++i) t.at(static_cast<int>(i), cls[i]) = 1.0;
  return t;
}

void check_weights(const std::vector<double>& w, int classes) {
  if (static_cast<int>(w.size()) != classes)
    throw Error(ErrorCode::ShapeMismatch, "expected " + std::to_string(classes) + " class weights");
  for (double v : w)
    if (!(v > 0.0)) throw Error(ErrorCode::InvalidArgument, "class weights must be positive");
}

}  // namespace

DepthHeadParams make_depth_head(int d, int bins, std::uint64_t seed, double sd) {
  Rng rng(derive_seed(seed, {0xDE97u}));
  DepthHeadParams p;
  p.spatial_w = ad::parameter(normal_tensor({bins, d}, sd, rng));
  p.spatial_b = ad::parameter(Tensor({bins}));
  p.global_w = ad::parameter(normal_tensor({bins, d}, sd, rng));
  p.global_b = ad::parameter(Tensor({bins}));
  return p;
}

SegHeadParams make_seg_head(int d_proj, int classes, std::uint64_t seed, double sd) {
  Rng rng(derive_seed(seed, {0x5E6u}));
  return {ad::parameter(normal_tensor({classes, d_proj}, sd, rng)), ad::parameter(Tensor({classes}))};
}

std::int64_t count_params(const DepthHeadParams& p) { return model::count_elements(p.params()); }
std::int64_t count_params(const SegHeadParams& p) { return model::count_elements(p.params()); }

ad::Var depth_probabilities(const model::LatentVars& f, const DepthHeadParams& p) {
  if (f.patches.dim(1) != p.width() || f.cls.size() != static_cast<std::size_t>(p.width()))
    throw Error(ErrorCode::ShapeMismatch, "depth head expects width " + std::to_string(p.width()));
  const int bins = p.bins();
  ad::Var spatial = tokens_to_grid(ad::linear(f.patches, p.spatial_w, &p.spatial_b));
  const int up = 4 * spatial.dim(1);
  spatial = ad::bilinear_resize(spatial, up, up);
  const ad::Var global = ad::reshape(ad::linear(ad::reshape(f.cls, {1, p.width()}), p.global_w, &p.global_b), {bins});
  const ad::Var logits = ad::add_channel(spatial, global);
  return ad::softmax_rows(ad::transpose(ad::reshape(logits, {bins, up * up})));
}

ad::Var depth_forward(const model::LatentVars& f, const DepthHeadParams& p, const DepthBins& bins, int out_h,
                      int out_w) {
  bins.validate();
  if (p.bins() != bins.count) throw Error(ErrorCode::ShapeMismatch, "head and bin counts differ");
  const ad::Var probs = depth_probabilities(f, p);
  const int up = static_cast<int>(std::lround(std::sqrt(static_cast<double>(probs.dim(0)))));
  // Expectation over bin indices first, then the affine map to metres: exact for
  // symmetric distributions such as the uniform one.
  Tensor index({bins.count, 1});
  for (int i = 0; i < bins.count; ++i) index.data[static_cast<std::size_t>(i)] = i;
  ad::Var e = ad::matmul(probs, ad::constant(std::move(index)));
  e = ad::add_scalar(ad::scale(ad::scale(e, bins.d_max - bins.d_min), 1.0 / (bins.count - 1)), bins.d_min);
  e = ad::clamp(e, bins.d_min, bins.d_max);
  e = ad::bilinear_resize(ad::reshape(e, {1, up, up}), out_h, out_w);
  return ad::reshape(e, {out_h, out_w});
}

Tensor depth_forward(const model::LatentFeatures& f, const DepthHeadParams& p, const DepthBins& bins, int out_h,
                     int out_w) {
  ad::NoGradGuard guard;
  return depth_forward(as_vars(f), p, bins, out_h, out_w).value();
}

Tensor depth_logits(const model::LatentFeatures& f, const DepthHeadParams& p, int out_h, int out_w) {
  ad::NoGradGuard guard;
  const auto v = as_vars(f);
  ad::Var spatial = tokens_to_grid(ad::linear(v.patches, p.spatial_w, &p.spatial_b));
  const int up = 4 * spatial.dim(1);
  spatial = ad::bilinear_resize(spatial, up, up);
  const ad::Var global = ad::reshape(ad::linear(v.cls, p.global_w, &p.global_b), {p.bins()});
  return ad::bilinear_resize(ad::add_channel(spatial, global), out_h, out_w).value();
}

Tensor depth_from_logits(const Tensor& logits, const DepthBins& bins) {
  bins.validate();
  if (logits.rank() != 3 || logits.dim(0) != bins.count) throw Error(ErrorCode::ShapeMismatch, "expected bins x H x W logits");
  const int h = logits.dim(1), w = logits.dim(2);
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double mx = logits.at(0, y, x);
      for (int b = 1; b < bins.count; ++b) mx = std::max(mx, logits.at(b, y, x));
      double z = 0.0, e = 0.0;
      for (int b = 0; b < bins.count; ++b) {
        const double p = std::exp(logits.at(b, y, x) - mx);
        z += p;
        e += p * b;
      }
      const double d = bins.d_min + ((e / z) * (bins.d_max - bins.d_min)) / (bins.count - 1);
      out.at(y, x) = std::clamp(d, bins.d_min, bins.d_max);
    }
  return out;
}

ad::Var seg_forward(const model::LatentVars& f, const model::Linear& projector, const SegHeadParams& p, int out_h,
                    int out_w) {
  if (f.patches.dim(1) != projector.in() || projector.out() != p.w.dim(1))
    throw Error(ErrorCode::ShapeMismatch, "projector / seg head widths do not chain");
  const ad::Var proj = ad::linear(f.patches, projector.w, &projector.b);
  const ad::Var grid = tokens_to_grid(ad::linear(proj, p.w, &p.b));
  return ad::bilinear_resize(grid, out_h, out_w);
}

Tensor seg_forward(const model::LatentFeatures& f, const model::Linear& projector, const SegHeadParams& p, int out_h,
                   int out_w) {
  ad::NoGradGuard guard;
  return seg_forward(as_vars(f), projector, p, out_h, out_w).value();
}

Tensor argmax_classes(const Tensor& logits) {
  if (logits.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "argmax expects C x H x W");
  const int c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = 0;
      for (int k = 1; k < c; ++k)
        if (logits.at(k, y, x) > logits.at(best, y, x)) best = k;
      out.at(y, x) = best;
    }
  return out;
}

ad::Var si_log_loss(const ad::Var& pred, const Tensor& gt, const std::vector<std::uint8_t>& valid, double si_lambda) {
  if (pred.size() != gt.size() || valid.size() != gt.size())
    throw Error(ErrorCode::ShapeMismatch, "pred / gt / valid sizes differ");
  const auto idx = valid_indices(valid);
  if (idx.empty()) throw Error(ErrorCode::NoValidPixels, "SI-log loss has no valid pixels");
  Tensor log_gt({static_cast<int>(idx.size()), 1});
  for (std::size_t i = 0; i < idx.size(); ++i) log_gt.data[i] = std::log(gt.data[static_cast<std::size_t>(idx[i])]);
  const ad::Var d = ad::sub(ad::log(gather_flat(pred, idx)), ad::constant(std::move(log_gt)));
  return ad::sub(ad::mean(ad::square(d)), ad::scale(ad::square(ad::mean(d)), si_lambda));
}

ad::Var multiscale_gradient_loss(const ad::Var& pred_log, const Tensor& gt_log, const std::vector<std::uint8_t>& valid,
                                 int scales) {
  if (gt_log.rank() != 2 || pred_log.size() != gt_log.size() || valid.size() != gt_log.size())
    throw Error(ErrorCode::ShapeMismatch, "MSG loss expects matching H x W maps");
  if (std::none_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; }))
    throw Error(ErrorCode::NoValidPixels, "MSG loss has no valid pixels");
  const int h = gt_log.dim(0), w = gt_log.dim(1);
  Tensor gt_safe = gt_log;
  for (std::size_t i = 0; i < valid.size(); ++i)
    if (!valid[i]) gt_safe.data[i] = 0.0;
  const ad::Var diff = ad::sub(ad::reshape(pred_log, {1, h, w}), ad::constant(Tensor({1, h, w}, gt_safe.data)));

  std::vector<ad::Var> per_scale;
  for (int k = 0; k < scales; ++k) {
    const int f = 1 << k;
    const int sh = h / f, sw = w / f;
    if (sh < 1 || sw < 1 || (sh < 2 && sw < 2)) break;
    // Cell validity: every source pixel of the pooled cell must be valid.
    std::vector<std::uint8_t> cell(static_cast<std::size_t>(sh) * sw, 1);
    for (int y = 0; y < sh * f; ++y)
      for (int x = 0; x < sw * f; ++x)
        if (!valid[static_cast<std::size_t>(y) * w + x]) cell[static_cast<std::size_t>(y / f) * sw + x / f] = 0;
    ad::Var map = diff;
    if (f > 1 || sh * f != h || sw * f != w) {
      std::vector<int> rows(static_cast<std::size_t>(sh * f));
      std::iota(rows.begin(), rows.end(), 0);
      // Crop to a multiple of the pooling factor, then average f x f blocks.
      ad::Var cropped = ad::reshape(diff, {h, w});
      cropped = ad::slice_cols(ad::gather_rows(cropped, rows), 0, sw * f);
      map = ad::adaptive_avg_pool2d(ad::reshape(cropped, {1, sh * f, sw * f}), sh, sw);
    }
    std::vector<int> a, b;
    for (int y = 0; y < sh; ++y)
      for (int x = 0; x < sw; ++x) {
        const int i = y * sw + x;
        if (!cell[static_cast<std::size_t>(i)]) continue;
        if (x + 1 < sw && cell[static_cast<std::size_t>(i + 1)]) {
          a.push_back(i + 1);
          b.push_back(i);
        }
        if (y + 1 < sh && cell[static_cast<std::size_t>(i + sw)]) {
          a.push_back(i + sw);
          b.push_back(i);
        }
      }
    if (a.empty()) continue;
    per_scale.push_back(ad::mean(ad::abs(ad::sub(gather_flat(map, a), gather_flat(map, b)))));
  }
  if (per_scale.empty()) return ad::scale(ad::sum(ad::reshape(pred_log, {static_cast<int>(pred_log.size())})), 0.0);
  ad::Var total = per_scale.front();
  for (std::size_t i = 1; i < per_scale.size(); ++i) total = ad::add(total, per_scale[i]);
  return ad::scale(total, 1.0 / static_cast<double>(per_scale.size()));
}

ad::Var depth_total_loss(const ad::Var& pred, const Tensor& gt, const DepthLossWeights& w) {
  if (pred.size() != gt.size()) throw Error(ErrorCode::ShapeMismatch, "pred and gt sizes differ");
  Tensor clamped = gt;
  std::vector<std::uint8_t> valid(gt.size(), 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double v = gt.data[i];
    if (std::isfinite(v) && v > 0.0) {
      valid[i] = 1;
      clamped.data[i] = std::clamp(v, w.clamp_min, w.clamp_max);
    } else {
      clamped.data[i] = w.clamp_min;
    }
  }
  const ad::Var si = si_log_loss(pred, clamped, valid, w.si_lambda);
  Tensor gt_log = clamped;
  for (auto& v : gt_log.data) v = std::log(v);
  if (gt_log.rank() != 2) gt_log.shape = {1, static_cast<int>(gt_log.size())};
  const ad::Var pred_log = ad::reshape(ad::log(pred), gt_log.shape);
  const ad::Var msg = multiscale_gradient_loss(pred_log, gt_log, valid, w.msg_scales);
  return ad::add(ad::scale(si, w.si), ad::scale(msg, w.msg));
}

ad::Var focal_loss(const ad::Var& logits, const Tensor& labels, const std::vector<double>& w, double gamma) {
  const int c = logits.dim(0);
  check_weights(w, c);
  const auto [idx, cls] = labeled_pixels(labels, c);
  const ad::Var logp = ad::log_softmax_rows(pixel_logits(logits, labels, idx));
  const ad::Var logp_true = ad::sum_last(ad::mul(logp, ad::constant(one_hot(cls, c))));
  Tensor wt({static_cast<int>(cls.size())});
  for (std::size_t i = 0; i < cls.size(); ++i) wt.data[i] = -w[static_cast<std::size_t>(cls[i])];
  ad::Var term = ad::mul(logp_true, ad::constant(std::move(wt)));
  if (gamma != 0.0) {
    const ad::Var one_minus_p = ad::add_scalar(ad::scale(ad::exp(logp_true), -1.0), 1.0);
    term = ad::mul(term, ad::pow(ad::clamp(one_minus_p, 0.0, 1.0), gamma));
  }
  return ad::mean(term);
}

ad::Var dice_loss(const ad::Var& logits, const Tensor& labels, const std::vector<double>& w, double smooth) {
  const int c = logits.dim(0);
  check_weights(w, c);
  const auto [idx, cls] = labeled_pixels(labels, c);
  const ad::Var probs = ad::softmax_rows(pixel_logits(logits, labels, idx));
  const Tensor g = one_hot(cls, c);
  Tensor g_sum({c});
  for (int cc : cls) g_sum.data[static_cast<std::size_t>(cc)] += 1.0;
  const ad::Var inter = ad::sum_first(ad::mul(probs, ad::constant(g)));
  const ad::Var p_sum = ad::sum_first(probs);
  const ad::Var dice = ad::div(ad::add_scalar(ad::scale(inter, 2.0), smooth),
                               ad::add_scalar(ad::add(p_sum, ad::constant(std::move(g_sum))), smooth));
  const double w_total = std::accumulate(w.begin(), w.end(), 0.0);
  const ad::Var weighted = ad::scale(ad::sum(ad::mul(dice, ad::constant(Tensor({c}, w)))), 1.0 / w_total);
  return ad::add_scalar(ad::scale(weighted, -1.0), 1.0);
}

ad::Var seg_total_loss(const ad::Var& logits, const Tensor& labels, const SegLossConfig& cfg) {
  return ad::add(ad::scale(dice_loss(logits, labels, cfg.class_weights, cfg.dice_smooth), cfg.lambda_dice),
                 ad::scale(focal_loss(logits, labels, cfg.class_weights, cfg.gamma), cfg.lambda_focal));
}

HeadTrainConfig HeadTrainConfig::seg_preset() { return {0, 128, 1e-4, 0.01, 1.0, 0}; }
HeadTrainConfig HeadTrainConfig::depth_preset() { return {0, 128, 5e-5, 0.01, 1.0, 0}; }

void HeadTrainConfig::validate() const {
  if (steps < 0 || batch < 1) throw Error(ErrorCode::ConfigError, "head training needs steps >= 0 and batch >= 1");
  if (!(lr > 0.0) || !(grad_clip_norm > 0.0) || weight_decay < 0.0)
    throw Error(ErrorCode::ConfigError, "head training needs lr > 0, clip > 0, weight_decay >= 0");
}

namespace {

template <typename LossFn>
HeadTrainResult train_loop(std::vector<ad::Var> params, std::size_t n, const HeadTrainConfig& cfg, LossFn&& loss_of) {
  cfg.validate();
  if (n == 0 && cfg.steps > 0) throw Error(ErrorCode::EmptyBatch, "head training needs data");
  optim::AdamW opt(params, {0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, {0x4EADu}));
  std::shuffle(order.begin(), order.end(), rng);
  HeadTrainResult r;
  std::size_t cursor = 0;
  for (int s = 0; s < cfg.steps; ++s) {
    opt.zero_grad();
    const int b = std::min<int>(cfg.batch, static_cast<int>(n));
    double total = 0.0;
    for (int i = 0; i < b; ++i) {
      const ad::Var l = loss_of(order[cursor++ % n]);
      total += l.item();
      ad::backward(l, 1.0 / b);
    }
    optim::clip_grad_norm(opt.params(), cfg.grad_clip_norm);
    opt.step(cfg.lr);
    r.losses.push_back(total / b);
  }
  opt.zero_grad();
  return r;
}

}  // namespace

HeadTrainResult train_seg_head(SegHeadParams& head, const model::Linear& projector, const std::vector<HeadSample>& data,
                               const HeadTrainConfig& config, const SegLossConfig& loss) {
  return train_loop(head.params(), data.size(), config, [&](std::size_t i) {
    const auto& s = data[i];
    const ad::Var logits = seg_forward(as_vars(s.features), projector, head, s.target.dim(0), s.target.dim(1));
    return seg_total_loss(logits, s.target, loss);
  });
}

HeadTrainResult train_depth_head(DepthHeadParams& head, const DepthBins& bins, const std::vector<HeadSample>& data,
                                 const HeadTrainConfig& config, const DepthLossWeights& loss) {
  return train_loop(head.params(), data.size(), config, [&](std::size_t i) {
    const auto& s = data[i];
    const ad::Var pred = depth_forward(as_vars(s.features), head, bins, s.target.dim(0), s.target.dim(1));
    return depth_total_loss(pred, s.target, loss);
  });
}

}  // namespace realm::heads
