#include "realm/optim.hpp"

#include <cmath>
#include <numbers>

namespace realm::optim {

double scheduled_lr(double base_lr, LrSchedule schedule, std::int64_t step, std::int64_t total_steps) {
  if (schedule == LrSchedule::Constant || total_steps <= 0) return base_lr;
  const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double global_grad_norm(const std::vector<ad::Var>& params) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) sq += g * g;
  return std::sqrt(sq);
}

double clip_grad_norm(std::vector<ad::Var>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.mutable_grad()) g *= s;
  }
  return norm;
}

AdamW::AdamW(std::vector<ad::Var> params, Options opts) : params_(std::move(params)), opts_(opts) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::zero_grad() { ad::zero_grad(params_); }

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& val = params_[k].mutable_value().data;
    const auto& g = params_[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < val.size(); ++i) {
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      val[i] -= lr * (mhat / (std::sqrt(vhat) + opts_.eps) + opts_.weight_decay * val[i]);
    }
  }
}

}  // namespace realm::optim
