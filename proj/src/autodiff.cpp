#include "realm/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "realm/error.hpp"

namespace realm::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

void require(bool cond, const char* op, const std::string& detail) {
  if (!cond) throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + detail);
}

void require_same(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

/// Wraps a freshly computed value. The closure is only retained when some
/// parent needs a gradient and recording is on.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node());
      node->backward_fn = std::move(fn);
    }
  }
  return Var(std::move(node));
}

inline bool wants(const std::shared_ptr<Node>& n) { return n->requires_grad; }

template <typename F>
Var unary(const Var& a, F&& fwd, std::function<double(double x, double y)> dydx) {
  Tensor out(a.shape());
  const auto& av = a.value().data;
  for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = fwd(av[i]);
  return make_op(std::move(out), {a}, [dydx = std::move(dydx)](Node& self) {
    auto& pa = self.parents[0];
    auto& g = pa->grad_buffer();
    const auto& x = pa->value.data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dydx(x[i], self.value.data[i]);
  });
}

}  // namespace

std::vector<double>& Node::grad_buffer() {
  if (grad.size() != value.data.size()) grad.assign(value.data.size(), 0.0);
  return grad;
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& root, double seed) {
  if (!root.requires_grad()) return;
  require(root.size() == 1, "backward", "root must be a scalar, got " + shape_str(root.shape()));

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) {
      n->grad_buffer();
      n->backward_fn(*n);
      // Interior gradients are not needed once propagated.
      std::vector<double>().swap(n->grad);
    }
  }
}

void zero_grad(std::span<Var> params) {
  for (auto& p : params) std::fill(p.mutable_grad().begin(), p.mutable_grad().end(), 0.0);
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] + b.value().data[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!wants(p)) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] - b.value().data[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    if (wants(self.parents[0])) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self.parents[1])) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] * b.value().data[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value.data[i];
    }
    if (wants(pb)) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value.data[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same(a, b, "div");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] / b.value().data[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb->value.data[i];
    }
    if (wants(pb)) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] -= self.grad[i] * self.value.data[i] / pb->value.data[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var abs(const Var& a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
}

Var pow(const Var& a, double p) {
  return unary(
      a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return x > 0 ? p * std::pow(x, p - 1.0) : (p == 1.0 ? 1.0 : 0.0); });
}

Var gelu(const Var& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [inv_sqrt_2pi](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return x >= lo && x <= hi ? 1.0 : 0.0; });
}

// ----------------------------------------------------------------- reductions

Var sum(const Var& a) {
  Tensor out({1}, a.value().sum());
  return make_op(std::move(out), {a}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Var mean(const Var& a) {
  require(a.size() > 0, "mean", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var sum_last(const Var& a) {
  require(a.value().rank() == 2, "sum_last", "expects rank 2");
  const int n = a.dim(0), d = a.dim(1);
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : a.value().row(i)) s += v;
    out.data[i] = s;
  }
  return make_op(std::move(out), {a}, [n, d](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) g[static_cast<std::size_t>(i) * d + j] += self.grad[i];
  });
}

Var sum_first(const Var& a) {
  require(a.value().rank() == 2, "sum_first", "expects rank 2");
  const int n = a.dim(0), d = a.dim(1);
  Tensor out({d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.data[j] += a.value().at(i, j);
  return make_op(std::move(out), {a}, [n, d](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) g[static_cast<std::size_t>(i) * d + j] += self.grad[j];
  });
}

// -------------------------------------------------------------- matrix ops

Var matmul(const Var& a, const Var& b) {
  require(a.value().rank() == 2 && b.value().rank() == 2 && a.dim(1) == b.dim(0), "matmul",
          shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out({n, m});
  MapMat(out.data.data(), n, m).noalias() =
      ConstMapMat(a.value().data.data(), n, k) * ConstMapMat(b.value().data.data(), k, m);
  return make_op(std::move(out), {a, b}, [n, k, m](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    ConstMapMat go(self.grad.data(), n, m);
    if (wants(pa))
      MapMat(pa->grad_buffer().data(), n, k).noalias() +=
          go * ConstMapMat(pb->value.data.data(), k, m).transpose();
    if (wants(pb))
      MapMat(pb->grad_buffer().data(), k, m).noalias() +=
          ConstMapMat(pa->value.data.data(), n, k).transpose() * go;
  });
}

Var transpose(const Var& a) {
  require(a.value().rank() == 2, "transpose", "expects rank 2");
  const int n = a.dim(0), m = a.dim(1);
  Tensor out({m, n});
  MapMat(out.data.data(), m, n) = ConstMapMat(a.value().data.data(), n, m).transpose();
  return make_op(std::move(out), {a}, [n, m](Node& self) {
    MapMat(self.parents[0]->grad_buffer().data(), n, m) +=
        ConstMapMat(self.grad.data(), m, n).transpose();
  });
}

Var linear(const Var& x, const Var& w, const Var* b) {
  require(x.value().rank() == 2 && w.value().rank() == 2 && x.dim(1) == w.dim(1), "linear",
          shape_str(x.shape()) + " with weight " + shape_str(w.shape()));
  const int n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (b) require(b->value().rank() == 1 && b->dim(0) == out_dim, "linear", "bias shape");
  Tensor out({n, out_dim});
  MapMat om(out.data.data(), n, out_dim);
  om.noalias() = ConstMapMat(x.value().data.data(), n, in) *
                 ConstMapMat(w.value().data.data(), out_dim, in).transpose();
  if (b) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < out_dim; ++j) om(i, j) += b->value().data[j];
  }
  std::vector<Var> parents{x, w};
  if (b) parents.push_back(*b);
  const bool has_bias = b != nullptr;
  return make_op(std::move(out), std::move(parents), [n, in, out_dim, has_bias](Node& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    ConstMapMat go(self.grad.data(), n, out_dim);
    if (wants(px))
      MapMat(px->grad_buffer().data(), n, in).noalias() +=
          go * ConstMapMat(pw->value.data.data(), out_dim, in);
    if (wants(pw))
      MapMat(pw->grad_buffer().data(), out_dim, in).noalias() +=
          go.transpose() * ConstMapMat(px->value.data.data(), n, in);
    if (has_bias && wants(self.parents[2])) {
      auto& gb = self.parents[2]->grad_buffer();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < out_dim; ++j) gb[j] += go(i, j);
    }
  });
}

Var add_row(const Var& a, const Var& b) {
  require(a.value().rank() == 2 && b.value().rank() == 1 && a.dim(1) == b.dim(0), "add_row",
          shape_str(a.shape()) + " + " + shape_str(b.shape()));
  const int n = a.dim(0), d = a.dim(1);
  Tensor out = a.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) += b.value().data[j];
  return make_op(std::move(out), {a, b}, [n, d](Node& self) {
    if (wants(self.parents[0])) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self.parents[1])) {
      auto& g = self.parents[1]->grad_buffer();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) g[j] += self.grad[static_cast<std::size_t>(i) * d + j];
    }
  });
}

Var mul_row(const Var& a, const Var& v) {
  require(a.value().rank() == 2 && v.value().rank() == 1 && a.dim(1) == v.dim(0), "mul_row",
          shape_str(a.shape()) + " * " + shape_str(v.shape()));
  const int n = a.dim(0), d = a.dim(1);
  Tensor out = a.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) *= v.value().data[j];
  return make_op(std::move(out), {a, v}, [n, d](Node& self) {
    auto& pa = self.parents[0];
    auto& pv = self.parents[1];
    if (wants(pa)) {
      auto& g = pa->grad_buffer();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
          const auto k = static_cast<std::size_t>(i) * d + j;
          g[k] += self.grad[k] * pv->value.data[j];
        }
    }
    if (wants(pv)) {
      auto& g = pv->grad_buffer();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
          const auto k = static_cast<std::size_t>(i) * d + j;
          g[j] += self.grad[k] * pa->value.data[k];
        }
    }
  });
}

Var add_channel(const Var& x, const Var& b) {
  require(x.value().rank() == 3 && b.value().rank() == 1 && x.dim(0) == b.dim(0), "add_channel",
          shape_str(x.shape()) + " + " + shape_str(b.shape()));
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor out = x.value();
  for (int k = 0; k < c; ++k)
    for (std::size_t i = 0; i < plane; ++i) out.data[k * plane + i] += b.value().data[k];
  return make_op(std::move(out), {x, b}, [c, plane](Node& self) {
    if (wants(self.parents[0])) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self.parents[1])) {
      auto& g = self.parents[1]->grad_buffer();
      for (int k = 0; k < c; ++k)
        for (std::size_t i = 0; i < plane; ++i) g[k] += self.grad[k * plane + i];
    }
  });
}

Var softmax_rows(const Var& a) {
  require(a.value().rank() == 2, "softmax_rows", "expects rank 2");
  const int n = a.dim(0), d = a.dim(1);
  Tensor out(a.shape());
  for (int i = 0; i < n; ++i) {
    auto src = a.value().row(i);
    auto dst = out.row(i);
    const double mx = *std::max_element(src.begin(), src.end());
    double z = 0.0;
    for (int j = 0; j < d; ++j) z += (dst[j] = std::exp(src[j] - mx));
    for (int j = 0; j < d; ++j) dst[j] /= z;
  }
  return make_op(std::move(out), {a}, [n, d](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int i = 0; i < n; ++i) {
      const double* y = self.value.data.data() + static_cast<std::size_t>(i) * d;
      const double* gy = self.grad.data() + static_cast<std::size_t>(i) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += gy[j] * y[j];
      for (int j = 0; j < d; ++j) g[static_cast<std::size_t>(i) * d + j] += y[j] * (gy[j] - dot);
    }
  });
}

Var log_softmax_rows(const Var& a) {
  require(a.value().rank() == 2, "log_softmax_rows", "expects rank 2");
  const int n = a.dim(0), d = a.dim(1);
  Tensor out(a.shape());
  for (int i = 0; i < n; ++i) {
    auto src = a.value().row(i);
    auto dst = out.row(i);
    const double mx = *std::max_element(src.begin(), src.end());
    double z = 0.0;
    for (int j = 0; j < d; ++j) z += std::exp(src[j] - mx);
    const double lse = mx + std::log(z);
    for (int j = 0; j < d; ++j) dst[j] = src[j] - lse;
  }
  return make_op(std::move(out), {a}, [n, d](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int i = 0; i < n; ++i) {
      const double* y = self.value.data.data() + static_cast<std::size_t>(i) * d;
      const double* gy = self.grad.data() + static_cast<std::size_t>(i) * d;
      double total = 0.0;
      for (int j = 0; j < d; ++j) total += gy[j];
      for (int j = 0; j < d; ++j)
        g[static_cast<std::size_t>(i) * d + j] += gy[j] - std::exp(y[j]) * total;
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require(x.value().rank() == 2 && gamma.size() == static_cast<std::size_t>(x.dim(1)) &&
              beta.size() == gamma.size(),
          "layer_norm", shape_str(x.shape()));
  const int n = x.dim(0), d = x.dim(1);
  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(n);
  for (int i = 0; i < n; ++i) {
    auto r = x.value().row(i);
    double mu = 0.0;
    for (double v : r) mu += v;
    mu /= d;
    double var = 0.0;
    for (double v : r) var += (v - mu) * (v - mu);
    var /= d;
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[i] = rs;
    for (int j = 0; j < d; ++j) {
      const auto k = static_cast<std::size_t>(i) * d + j;
      (*xhat)[k] = (r[j] - mu) * rs;
      out.data[k] = (*xhat)[k] * gamma.value().data[j] + beta.value().data[j];
    }
  }
  return make_op(std::move(out), {x, gamma, beta}, [n, d, xhat, rstd](Node& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    const auto& gam = pg->value.data;
    if (wants(pg) || wants(pb)) {
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
          const auto k = static_cast<std::size_t>(i) * d + j;
          if (wants(pg)) pg->grad_buffer()[j] += self.grad[k] * (*xhat)[k];
          if (wants(pb)) pb->grad_buffer()[j] += self.grad[k];
        }
    }
    if (wants(px)) {
      auto& g = px->grad_buffer();
      std::vector<double> dxhat(d);
      for (int i = 0; i < n; ++i) {
        double s1 = 0.0, s2 = 0.0;
        for (int j = 0; j < d; ++j) {
          const auto k = static_cast<std::size_t>(i) * d + j;
          dxhat[j] = self.grad[k] * gam[j];
          s1 += dxhat[j];
          s2 += dxhat[j] * (*xhat)[k];
        }
        for (int j = 0; j < d; ++j) {
          const auto k = static_cast<std::size_t>(i) * d + j;
          g[k] += (*rstd)[i] * (dxhat[j] - s1 / d - (*xhat)[k] * s2 / d);
        }
      }
    }
  });
}

// -------------------------------------------------------------- structural

Var reshape(const Var& a, Shape shape) {
  require(shape_numel(shape) == a.size(), "reshape",
          shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor out(std::move(shape), a.value().data);
  return make_op(std::move(out), {a}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var slice_cols(const Var& a, int start, int len) {
  require(a.value().rank() == 2 && start >= 0 && len >= 0 && start + len <= a.dim(1), "slice_cols",
          shape_str(a.shape()));
  const int n = a.dim(0), d = a.dim(1);
  Tensor out({n, len});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = a.value().at(i, start + j);
  return make_op(std::move(out), {a}, [n, d, start, len](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < len; ++j)
        g[static_cast<std::size_t>(i) * d + start + j] += self.grad[static_cast<std::size_t>(i) * len + j];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const int n = parts[0].dim(0);
  int total = 0;
  for (const auto& p : parts) {
    require(p.value().rank() == 2 && p.dim(0) == n, "concat_cols", shape_str(p.shape()));
    total += p.dim(1);
  }
  Tensor out({n, total});
  int off = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p.dim(1); ++j) out.at(i, off + j) = p.value().at(i, j);
    off += p.dim(1);
  }
  return make_op(std::move(out), parts, [n, total](Node& self) {
    int off = 0;
    for (auto& p : self.parents) {
      const int w = p->value.dim(1);
      if (wants(p)) {
        auto& g = p->grad_buffer();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < w; ++j)
            g[static_cast<std::size_t>(i) * w + j] += self.grad[static_cast<std::size_t>(i) * total + off + j];
      }
      off += w;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  const int d = parts[0].dim(1);
  int rows = 0;
  for (const auto& p : parts) {
    require(p.value().rank() == 2 && p.dim(1) == d, "concat_rows", shape_str(p.shape()));
    rows += p.dim(0);
  }
  Tensor out({rows, d});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
  }
  return make_op(std::move(out), parts, [](Node& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      const std::size_t sz = p->value.size();
      if (wants(p)) {
        auto& g = p->grad_buffer();
        for (std::size_t i = 0; i < sz; ++i) g[i] += self.grad[off + i];
      }
      off += sz;
    }
  });
}

Var gather_rows(const Var& a, std::span<const int> rows) {
  require(a.value().rank() == 2, "gather_rows", "expects rank 2");
  const int n = a.dim(0), d = a.dim(1);
  auto idx = std::make_shared<std::vector<int>>(rows.begin(), rows.end());
  Tensor out({static_cast<int>(idx->size()), d});
  for (std::size_t r = 0; r < idx->size(); ++r) {
    const int src = (*idx)[r];
    require(src >= 0 && src < n, "gather_rows", "row index out of range");
    std::copy_n(a.value().row(src).begin(), d, out.row(static_cast<int>(r)).begin());
  }
  return make_op(std::move(out), {a}, [idx, d](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < idx->size(); ++r)
      for (int j = 0; j < d; ++j)
        g[static_cast<std::size_t>((*idx)[r]) * d + j] += self.grad[r * d + j];
  });
}

Var substitute_rows(const Var& a, const Var& replacement, const std::vector<bool>& keep) {
  require(a.value().rank() == 2 && replacement.size() == static_cast<std::size_t>(a.dim(1)) &&
              keep.size() == static_cast<std::size_t>(a.dim(0)),
          "substitute_rows", shape_str(a.shape()));
  const int n = a.dim(0), d = a.dim(1);
  Tensor out = a.value();
  for (int i = 0; i < n; ++i)
    if (!keep[i])
      for (int j = 0; j < d; ++j) out.at(i, j) = replacement.value().data[j];
  return make_op(std::move(out), {a, replacement}, [keep, n, d](Node& self) {
    auto& pa = self.parents[0];
    auto& pr = self.parents[1];
    for (int i = 0; i < n; ++i) {
      const double* gi = self.grad.data() + static_cast<std::size_t>(i) * d;
      if (keep[i]) {
        if (wants(pa)) {
          auto& g = pa->grad_buffer();
          for (int j = 0; j < d; ++j) g[static_cast<std::size_t>(i) * d + j] += gi[j];
        }
      } else if (wants(pr)) {
        auto& g = pr->grad_buffer();
        for (int j = 0; j < d; ++j) g[j] += gi[j];
      }
    }
  });
}

// ----------------------------------------------------------------- spatial

Var conv2d(const Var& x, const Var& w, const Var* b, int stride, int pad) {
  require(x.value().rank() == 3 && w.value().rank() == 4 && w.dim(1) == x.dim(0) &&
              w.dim(2) == w.dim(3) && stride >= 1 && pad >= 0,
          "conv2d", shape_str(x.shape()) + " with kernel " + shape_str(w.shape()));
  const int c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int o = w.dim(0), k = w.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (wd + 2 * pad - k) / stride + 1;
  require(oh > 0 && ow > 0, "conv2d", "kernel larger than padded input");
  if (b) require(b->size() == static_cast<std::size_t>(o), "conv2d", "bias shape");
  const int kk = c * k * k;
  const int p = oh * ow;

  // im2col: [kk x p]
  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(kk) * p, 0.0);
  const auto& xv = x.value().data;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* dst = cols->data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * p;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const double* src = xv.data() + (static_cast<std::size_t>(ci) * h + iy) * wd;
          for (int xo = 0; xo < ow; ++xo) {
            const int ix = xo * stride - pad + kx;
            if (ix >= 0 && ix < wd) dst[y * ow + xo] = src[ix];
          }
        }
      }

  Tensor out({o, oh, ow});
  MapMat om(out.data.data(), o, p);
  om.noalias() = ConstMapMat(w.value().data.data(), o, kk) * ConstMapMat(cols->data(), kk, p);
  if (b)
    for (int oi = 0; oi < o; ++oi) om.row(oi).array() += b->value().data[oi];

  std::vector<Var> parents{x, w};
  if (b) parents.push_back(*b);
  const bool has_bias = b != nullptr;
  return make_op(std::move(out), std::move(parents),
                 [=](Node& self) {
                   auto& px = self.parents[0];
                   auto& pw = self.parents[1];
                   ConstMapMat go(self.grad.data(), o, p);
                   if (wants(pw))
                     MapMat(pw->grad_buffer().data(), o, kk).noalias() +=
                         go * ConstMapMat(cols->data(), kk, p).transpose();
                   if (has_bias && wants(self.parents[2])) {
                     auto& gb = self.parents[2]->grad_buffer();
                     for (int oi = 0; oi < o; ++oi) gb[oi] += go.row(oi).sum();
                   }
                   if (wants(px)) {
                     RowMat dcols = ConstMapMat(pw->value.data.data(), o, kk).transpose() * go;
                     auto& gx = px->grad_buffer();
                     for (int ci = 0; ci < c; ++ci)
                       for (int ky = 0; ky < k; ++ky)
                         for (int kx = 0; kx < k; ++kx) {
                           const double* src = dcols.data() + static_cast<std::size_t>((ci * k + ky) * k + kx) * p;
                           for (int y = 0; y < oh; ++y) {
                             const int iy = y * stride - pad + ky;
                             if (iy < 0 || iy >= h) continue;
                             double* dst = gx.data() + (static_cast<std::size_t>(ci) * h + iy) * wd;
                             for (int xo = 0; xo < ow; ++xo) {
                               const int ix = xo * stride - pad + kx;
                               if (ix >= 0 && ix < wd) dst[ix] += src[y * ow + xo];
                             }
                           }
                         }
                   }
                 });
}

namespace {

struct AxisWeights {
  // For each output index: up to two (source index, weight) taps.
  std::vector<int> i0, i1;
  std::vector<double> w0, w1;
};

AxisWeights bilinear_axis(int in, int out) {
  AxisWeights a;
  a.i0.resize(out);
  a.i1.resize(out);
  a.w0.resize(out);
  a.w1.resize(out);
  const double sc = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * sc - 0.5;
    if (src < 0) src = 0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const int hi = std::min(lo + 1, in - 1);
    const double l = src - lo;
    a.i0[i] = lo;
    a.i1[i] = hi;
    a.w0[i] = 1.0 - l;
    a.w1[i] = l;
  }
  return a;
}

}  // namespace

Var bilinear_resize(const Var& x, int out_h, int out_w) {
  require(x.value().rank() == 3 && out_h > 0 && out_w > 0 && x.dim(1) > 0 && x.dim(2) > 0,
          "bilinear_resize", shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == out_h && w == out_w) return reshape(x, x.shape());
  auto ay = std::make_shared<AxisWeights>(bilinear_axis(h, out_h));
  auto ax = std::make_shared<AxisWeights>(bilinear_axis(w, out_w));
  Tensor out({c, out_h, out_w});
  const auto& xv = x.value();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < out_h; ++y)
      for (int xo = 0; xo < out_w; ++xo) {
        const int y0 = ay->i0[y], y1 = ay->i1[y], x0 = ax->i0[xo], x1 = ax->i1[xo];
        // Interpolation form keeps constant inputs exact.
        const double top = xv.at(ci, y0, x0) + ax->w1[xo] * (xv.at(ci, y0, x1) - xv.at(ci, y0, x0));
        const double bot = xv.at(ci, y1, x0) + ax->w1[xo] * (xv.at(ci, y1, x1) - xv.at(ci, y1, x0));
        out.at(ci, y, xo) = top + ay->w1[y] * (bot - top);
      }
  return make_op(std::move(out), {x}, [=](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    auto at = [&](int ci, int yy, int xx) -> double& {
      return g[(static_cast<std::size_t>(ci) * h + yy) * w + xx];
    };
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < out_h; ++y)
        for (int xo = 0; xo < out_w; ++xo) {
          const double go = self.grad[(static_cast<std::size_t>(ci) * out_h + y) * out_w + xo];
          const int y0 = ay->i0[y], y1 = ay->i1[y], x0 = ax->i0[xo], x1 = ax->i1[xo];
          at(ci, y0, x0) += go * ay->w0[y] * ax->w0[xo];
          at(ci, y0, x1) += go * ay->w0[y] * ax->w1[xo];
          at(ci, y1, x0) += go * ay->w1[y] * ax->w0[xo];
          at(ci, y1, x1) += go * ay->w1[y] * ax->w1[xo];
        }
  });
}

Var adaptive_avg_pool2d(const Var& x, int out_h, int out_w) {
  require(x.value().rank() == 3 && out_h > 0 && out_w > 0, "adaptive_avg_pool2d", shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto bounds = [](int i, int in, int out) {
    const int s = (i * in) / out;
    const int e = ((i + 1) * in + out - 1) / out;
    return std::pair{s, e};
  };
  Tensor out({c, out_h, out_w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < out_h; ++y) {
      auto [ys, ye] = bounds(y, h, out_h);
      for (int xo = 0; xo < out_w; ++xo) {
        auto [xs, xe] = bounds(xo, w, out_w);
        double s = 0.0;
        for (int yy = ys; yy < ye; ++yy)
          for (int xx = xs; xx < xe; ++xx) s += x.value().at(ci, yy, xx);
        out.at(ci, y, xo) = s / ((ye - ys) * (xe - xs));
      }
    }
  return make_op(std::move(out), {x}, [=](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < out_h; ++y) {
        auto [ys, ye] = bounds(y, h, out_h);
        for (int xo = 0; xo < out_w; ++xo) {
          auto [xs, xe] = bounds(xo, w, out_w);
          const double go = self.grad[(static_cast<std::size_t>(ci) * out_h + y) * out_w + xo] /
                            ((ye - ys) * (xe - xs));
          for (int yy = ys; yy < ye; ++yy)
            for (int xx = xs; xx < xe; ++xx) g[(static_cast<std::size_t>(ci) * h + yy) * w + xx] += go;
        }
      }
  });
}

Var row_cosine(const Var& a, const Var& b, double eps) {
  require_same(a, b, "row_cosine");
  require(a.value().rank() == 2, "row_cosine", "expects rank 2");
  const int n = a.dim(0), d = a.dim(1);
  Tensor out({n});
  auto na = std::make_shared<std::vector<double>>(n);
  auto nb = std::make_shared<std::vector<double>>(n);
  for (int i = 0; i < n; ++i) {
    auto ra = a.value().row(i);
    auto rb = b.value().row(i);
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (int j = 0; j < d; ++j) {
      dot += ra[j] * rb[j];
      sa += ra[j] * ra[j];
      sb += rb[j] * rb[j];
    }
    (*na)[i] = std::sqrt(sa);
    (*nb)[i] = std::sqrt(sb);
    if ((*na)[i] == 0.0 && (*nb)[i] == 0.0) {
      out.data[i] = 1.0;
    } else {
      // sqrt of the product keeps identical rows at exactly 1; the clamp keeps
      // rounding from pushing 1 - cos below zero.
      const double den = std::sqrt(std::max(sa, eps * eps) * std::max(sb, eps * eps));
      out.data[i] = std::clamp(dot / den, -1.0, 1.0);
    }
  }
  return make_op(std::move(out), {a, b}, [n, d, na, nb, eps](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    for (int i = 0; i < n; ++i) {
      const double ai = (*na)[i], bi = (*nb)[i];
      if (ai == 0.0 && bi == 0.0) continue;
      const double ca = std::max(ai, eps), cb = std::max(bi, eps);
      const double sim = self.value.data[i];
      const double gi = self.grad[i];
      const double* ra = pa->value.data.data() + static_cast<std::size_t>(i) * d;
      const double* rb = pb->value.data.data() + static_cast<std::size_t>(i) * d;
      if (wants(pa)) {
        auto& g = pa->grad_buffer();
        for (int j = 0; j < d; ++j) {
          double v = rb[j] / (ca * cb);
          if (ai > eps) v -= sim * ra[j] / (ai * ai);
          g[static_cast<std::size_t>(i) * d + j] += gi * v;
        }
      }
      if (wants(pb)) {
        auto& g = pb->grad_buffer();
        for (int j = 0; j < d; ++j) {
          double v = ra[j] / (ca * cb);
          if (bi > eps) v -= sim * rb[j] / (bi * bi);
          g[static_cast<std::size_t>(i) * d + j] += gi * v;
        }
      }
    }
  });
}

}  // namespace realm::ad
