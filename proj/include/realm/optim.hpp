#pragma once

#include <cstdint>
#include <vector>

#include "realm/autodiff.hpp"

namespace realm::optim {

enum class LrSchedule { Constant, Cosine };

double scheduled_lr(double base_lr, LrSchedule schedule, std::int64_t step, std::int64_t total_steps);

/// L2 norm over the accumulated gradients of `params`.
double global_grad_norm(const std::vector<ad::Var>& params);

/// Rescales gradients so their global norm is at most `max_norm`.
/// Returns the norm measured before clipping.
double clip_grad_norm(std::vector<ad::Var>& params, double max_norm);

/// Adam with bias correction and decoupled weight decay.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW(std::vector<ad::Var> params, Options opts);

  void step(double lr);
  void zero_grad();
  std::int64_t steps() const { return t_; }
  const std::vector<ad::Var>& params() const { return params_; }
  std::vector<ad::Var>& params() { return params_; }

 private:
  std::vector<ad::Var> params_;
  Options opts_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace realm::optim
