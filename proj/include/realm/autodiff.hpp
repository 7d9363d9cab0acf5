#pragma once

// Tape-free reverse-mode differentiation over realm::Tensor.
//
// Every op returns a Var whose node remembers its parents and a closure that
// pushes the node's gradient into them. Calling backward() on a scalar walks
// the graph in reverse topological order. Leaves created with parameter()
// accumulate gradients across backward() calls until zero_grad().
//
// Layout conventions: token matrices are [rows x width]; images and feature
// maps are channel-major [C x H x W].

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "realm/tensor.hpp"

namespace realm::ad {

struct Node {
  Tensor value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  int dim(int i) const { return node_->value.dim(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  /// Gradient buffer (zeros if nothing was accumulated yet).
  const std::vector<double>& grad() const { return node_->grad_buffer(); }
  std::vector<double>& mutable_grad() { return node_->grad_buffer(); }
  double item() const { return node_->value.data.at(0); }

  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

bool grad_enabled();

/// Disables graph recording for the guard's lifetime (inference paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

void backward(const Var& root, double seed = 1.0);
void zero_grad(std::span<Var> params);

// elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var exp(const Var& a);
Var log(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
/// a^p for a >= 0 (used by the focal modulating factor).
Var pow(const Var& a, double p);
Var gelu(const Var& a);
Var relu(const Var& a);
/// Gradient passes inside [lo, hi] and is zero outside.
Var clamp(const Var& a, double lo, double hi);

// reductions
Var sum(const Var& a);
Var mean(const Var& a);
/// [N x D] -> [N]
Var sum_last(const Var& a);
/// [N x D] -> [D]
Var sum_first(const Var& a);

// matrix ops
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// x [N x in], w [out x in], b [out] (optional) -> [N x out]
Var linear(const Var& x, const Var& w, const Var* b = nullptr);
/// a [N x D] + b [D] broadcast over rows
Var add_row(const Var& a, const Var& b);
/// a [N x D] * v [D] broadcast over rows
Var mul_row(const Var& a, const Var& v);
/// x [C x H x W] + b [C]
Var add_channel(const Var& x, const Var& b);
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

// structural
Var reshape(const Var& a, Shape shape);
Var slice_cols(const Var& a, int start, int len);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var gather_rows(const Var& a, std::span<const int> rows);
/// Rows with keep[i] == false are replaced by `replacement` [D].
Var substitute_rows(const Var& a, const Var& replacement, const std::vector<bool>& keep);

// spatial
Var conv2d(const Var& x, const Var& w, const Var* b, int stride, int pad);
Var adaptive_avg_pool2d(const Var& x, int out_h, int out_w);
/// Bilinear resize with half-pixel centers (align_corners = false).
Var bilinear_resize(const Var& x, int out_h, int out_w);

/// Row-wise cosine similarity of two [N x D] matrices -> [N]. Each norm is
/// clamped below at eps; a row pair that is zero on both sides has similarity 1.
Var row_cosine(const Var& a, const Var& b, double eps);

}  // namespace realm::ad
