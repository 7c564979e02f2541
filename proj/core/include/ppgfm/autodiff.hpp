#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ppgfm/blas.hpp"
#include "ppgfm/tensor.hpp"

namespace ppgfm::ad {

namespace detail {

/// Two-way split of [0, n) across the caller and one helper thread. Bodies
/// write disjoint ranges and never reduce across the split, so results are
/// bit-identical to the serial order.
template <typename F>
void parallel_over(int64_t n, int64_t min_per_thread, F&& body) {
  if (n < 2 * min_per_thread || std::thread::hardware_concurrency() < 2) {
    body(int64_t{0}, n);
    return;
  }
  const int64_t mid = n / 2;
  std::thread helper([&] { body(int64_t{0}, mid); });
  body(mid, n);
  helper.join();
}

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, pushes to parents

  void accumulate(const Tensor<T>& g) {
    if (!requires_grad) return;
    if (grad.empty()) grad = Tensor<T>(value.shape());
    if (!grad.same_shape(g)) throw std::logic_error("autodiff: gradient shape mismatch");
    T* dst = grad.data();
    const T* src = g.data();
    parallel_over(g.numel(), int64_t{1} << 16, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) dst[i] += src[i];
    });
  }
};

/// Graph recording is disabled inside no-grad scopes (inference paths);
/// ops then produce detached results.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

struct NoGradGuard {
  NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  bool prev;
};

/// Handle to a node in the computation graph. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;

  static Var leaf(Tensor<T> value, bool requires_grad = false) {
    Var v;
    v.node_ = std::make_shared<detail::Node<T>>();
    v.node_->value = std::move(value);
    v.node_->requires_grad = requires_grad;
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value_mut() { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  Tensor<T>& grad() {
    if (node_->grad.empty()) node_->grad = Tensor<T>(node_->value.shape());
    return node_->grad;
  }
  void zero_grad() {
    if (node_ && !node_->grad.empty()) node_->grad.fill(T{});
  }

  const std::vector<int64_t>& shape() const { return node_->value.shape(); }

  std::shared_ptr<detail::Node<T>> node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

namespace detail {

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward_fn) {
  Var<T> out = Var<T>::leaf(std::move(value), false);
  if (!grad_mode()) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.node_ptr()->requires_grad;
  if (!needs) return out;
  auto node = out.node_ptr();
  node->requires_grad = true;
  node->parents.reserve(inputs.size());
  for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
  node->backward_fn = std::move(backward_fn);
  return out;
}

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                Tensor<T>::shape_str(a.shape()) + " vs " +
                                Tensor<T>::shape_str(b.shape()));
}

}  // namespace detail

/// Reverse accumulation from a scalar loss over the recorded graph.
/// Gradients add into every reachable node with requires_grad set.
template <typename T>
void backward(const Var<T>& loss) {
  if (loss.value().numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar");
  auto root = loss.node_ptr();
  if (!root->requires_grad)
    throw std::invalid_argument("backward: loss does not require grad");

  // Post-order DFS; reverse order is a valid topological order for the pull.
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  std::vector<std::pair<detail::Node<T>*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      detail::Node<T>* child = node->parents[next_child++].get();
      if (child->requires_grad && seen.insert(child).second)
        stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->accumulate(Tensor<T>(root->value.shape(), T{1}));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> y = Tensor<T>::uninitialized(a.shape());
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  T* py = y.data();
  detail::parallel_over(y.numel(), int64_t{1} << 16, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) py[i] = pa[i] + pb[i];
  });
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return detail::make_op<T>(std::move(y), {a, b}, [an, bn](detail::Node<T>& self) {
    an->accumulate(self.grad);
    bn->accumulate(self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<T> y = Tensor<T>::uninitialized(a.shape());
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  T* py = y.data();
  for (int64_t i = 0; i < y.numel(); ++i) py[i] = pa[i] - pb[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return detail::make_op<T>(std::move(y), {a, b}, [an, bn](detail::Node<T>& self) {
    an->accumulate(self.grad);
    Tensor<T> neg = Tensor<T>::uninitialized(self.grad.shape());
    for (int64_t i = 0; i < neg.numel(); ++i) neg[i] = -self.grad[i];
    bn->accumulate(neg);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> y = Tensor<T>::uninitialized(a.shape());
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  T* py = y.data();
  for (int64_t i = 0; i < y.numel(); ++i) py[i] = pa[i] * pb[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return detail::make_op<T>(std::move(y), {a, b}, [an, bn](detail::Node<T>& self) {
    Tensor<T> ga = Tensor<T>::uninitialized(self.grad.shape());
    Tensor<T> gb = Tensor<T>::uninitialized(self.grad.shape());
    for (int64_t i = 0; i < ga.numel(); ++i) {
      ga[i] = self.grad[i] * bn->value[i];
      gb[i] = self.grad[i] * an->value[i];
    }
    an->accumulate(ga);
    bn->accumulate(gb);
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "div");
  Tensor<T> y = Tensor<T>::uninitialized(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] / b.value()[i];
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return detail::make_op<T>(std::move(y), {a, b}, [an, bn](detail::Node<T>& self) {
    Tensor<T> ga = Tensor<T>::uninitialized(self.grad.shape());
    Tensor<T> gb = Tensor<T>::uninitialized(self.grad.shape());
    for (int64_t i = 0; i < ga.numel(); ++i) {
      const T inv = T{1} / bn->value[i];
      ga[i] = self.grad[i] * inv;
      gb[i] = -self.grad[i] * an->value[i] * inv * inv;
    }
    an->accumulate(ga);
    bn->accumulate(gb);
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
  Tensor<T> y = Tensor<T>::uninitialized(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] + c;
  auto an = a.node_ptr();
  return detail::make_op<T>(std::move(y), {a},
                            [an](detail::Node<T>& self) { an->accumulate(self.grad); });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, T c) {
  Tensor<T> y = Tensor<T>::uninitialized(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * c;
  auto an = a.node_ptr();
  return detail::make_op<T>(std::move(y), {a}, [an, c](detail::Node<T>& self) {
    Tensor<T> g = Tensor<T>::uninitialized(self.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * c;
    an->accumulate(g);
  });
}

/// Elementwise add of a non-differentiable constant tensor (masks, targets).
template <typename T>
Var<T> add_const(const Var<T>& a, const Tensor<T>& k) {
  if (!a.value().same_shape(k)) throw std::invalid_argument("add_const: shape mismatch");
  Tensor<T> y = Tensor<T>::uninitialized(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] + k[i];
  auto an = a.node_ptr();
  return detail::make_op<T>(std::move(y), {a},
                            [an](detail::Node<T>& self) { an->accumulate(self.grad); });
}

/// Elementwise multiply by a non-differentiable constant tensor.
template <typename T>
Var<T> mul_const(const Var<T>& a, Tensor<T> k) {
  if (!a.value().same_shape(k)) throw std::invalid_argument("mul_const: shape mismatch");
  Tensor<T> y = Tensor<T>::uninitialized(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = a.value()[i] * k[i];
  auto an = a.node_ptr();
  auto kk = std::make_shared<Tensor<T>>(std::move(k));
  return detail::make_op<T>(std::move(y), {a}, [an, kk](detail::Node<T>& self) {
    Tensor<T> g = Tensor<T>::uninitialized(self.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * (*kk)[i];
    an->accumulate(g);
  });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  Tensor<T> y = Tensor<T>::uninitialized(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::abs(a.value()[i]);
  auto an = a.node_ptr();
  return detail::make_op<T>(std::move(y), {a}, [an](detail::Node<T>& self) {
    Tensor<T> g = Tensor<T>::uninitialized(self.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) {
      const T x = an->value[i];
      g[i] = x > T{0} ? self.grad[i] : (x < T{0} ? -self.grad[i] : T{0});
    }
    an->accumulate(g);
  });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  Tensor<T> y = Tensor<T>::uninitialized(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::exp(a.value()[i]);
  auto an = a.node_ptr();
  auto saved = std::make_shared<Tensor<T>>(y);
  return detail::make_op<T>(std::move(y), {a}, [an, saved](detail::Node<T>& self) {
    Tensor<T> g = Tensor<T>::uninitialized(self.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * (*saved)[i];
    an->accumulate(g);
  });
}

template <typename T>
Var<T> log(const Var<T>& a) {
  Tensor<T> y = Tensor<T>::uninitialized(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::log(a.value()[i]);
  auto an = a.node_ptr();
  return detail::make_op<T>(std::move(y), {a}, [an](detail::Node<T>& self) {
    Tensor<T> g = Tensor<T>::uninitialized(self.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] / an->value[i];
    an->accumulate(g);
  });
}

template <typename T>
Var<T> sqrt(const Var<T>& a) {
  Tensor<T> y = Tensor<T>::uninitialized(a.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::sqrt(a.value()[i]);
  auto an = a.node_ptr();
  auto saved = std::make_shared<Tensor<T>>(y);
  return detail::make_op<T>(std::move(y), {a}, [an, saved](detail::Node<T>& self) {
    Tensor<T> g = Tensor<T>::uninitialized(self.grad.shape());
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] / (T{2} * (*saved)[i]);
    an->accumulate(g);
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> y = Tensor<T>::uninitialized(a.shape());
  const T* src = a.value().data();
  T* dst = y.data();
  detail::parallel_over(y.numel(), int64_t{1} << 16, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
  });
  auto an = a.node_ptr();
  return detail::make_op<T>(std::move(y), {a}, [an](detail::Node<T>& self) {
    Tensor<T> g = Tensor<T>::uninitialized(self.grad.shape());
    const T* v = an->value.data();
    const T* up = self.grad.data();
    T* out = g.data();
    detail::parallel_over(g.numel(), int64_t{1} << 16, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) out[i] = v[i] > T{0} ? up[i] : T{0};
    });
    an->accumulate(g);
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int64_t> new_shape) {
  Tensor<T> y = a.value().reshaped(std::move(new_shape));
  auto an = a.node_ptr();
  return detail::make_op<T>(std::move(y), {a}, [an](detail::Node<T>& self) {
    an->accumulate(self.grad.reshaped(an->value.shape()));
  });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.value().ndim() != 2 || b.value().ndim() != 2 || a.value().dim(1) != b.value().dim(0))
    throw std::invalid_argument("matmul: expects [m,k] x [k,n]");
  const int64_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  Tensor<T> y = Tensor<T>::uninitialized({m, n});
  ppgfm::detail::gemm(false, false, m, n, k, T{1}, a.value().data(), k,
                      b.value().data(), n, T{0}, y.data(), n);
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return detail::make_op<T>(std::move(y), {a, b}, [an, bn, m, k, n](detail::Node<T>& self) {
    if (an->requires_grad) {
      Tensor<T> ga = Tensor<T>::uninitialized({m, k});
      ppgfm::detail::gemm(false, true, m, k, n, T{1}, self.grad.data(), n,
                          bn->value.data(), n, T{0}, ga.data(), k);
      an->accumulate(ga);
    }
    if (bn->requires_grad) {
      Tensor<T> gb = Tensor<T>::uninitialized({k, n});
      ppgfm::detail::gemm(true, false, k, n, m, T{1}, an->value.data(), k,
                          self.grad.data(), n, T{0}, gb.data(), n);
      bn->accumulate(gb);
    }
  });
}

/// y = a * b^T with a: [m,k], b: [n,k]. Used for the cosine-similarity matrix.
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  if (a.value().ndim() != 2 || b.value().ndim() != 2 || a.value().dim(1) != b.value().dim(1))
    throw std::invalid_argument("matmul_nt: expects [m,k] x [n,k]");
  const int64_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(0);
  Tensor<T> y = Tensor<T>::uninitialized({m, n});
  ppgfm::detail::gemm(false, true, m, n, k, T{1}, a.value().data(), k,
                      b.value().data(), k, T{0}, y.data(), n);
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return detail::make_op<T>(std::move(y), {a, b}, [an, bn, m, k, n](detail::Node<T>& self) {
    if (an->requires_grad) {
      Tensor<T> ga = Tensor<T>::uninitialized({m, k});
      ppgfm::detail::gemm(false, false, m, k, n, T{1}, self.grad.data(), n,
                          bn->value.data(), k, T{0}, ga.data(), k);
      an->accumulate(ga);
    }
    if (bn->requires_grad) {
      Tensor<T> gb = Tensor<T>::uninitialized({n, k});
      ppgfm::detail::gemm(true, false, n, k, m, T{1}, self.grad.data(), n,
                          an->value.data(), k, T{0}, gb.data(), k);
      bn->accumulate(gb);
    }
  });
}

/// y = x * w^T + bias with x: [m,k], w: [n,k], bias: [n].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  if (x.value().ndim() != 2 || w.value().ndim() != 2 || x.value().dim(1) != w.value().dim(1))
    throw std::invalid_argument("linear: expects x [m,k], w [n,k]");
  const int64_t m = x.value().dim(0), k = x.value().dim(1), n = w.value().dim(0);
  if (bias.value().numel() != n) throw std::invalid_argument("linear: bias size mismatch");
  Tensor<T> y = Tensor<T>::uninitialized({m, n});
  ppgfm::detail::gemm(false, true, m, n, k, T{1}, x.value().data(), k,
                      w.value().data(), k, T{0}, y.data(), n);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) y[i * n + j] += bias.value()[j];
  auto xn = x.node_ptr();
  auto wn = w.node_ptr();
  auto bn = bias.node_ptr();
  return detail::make_op<T>(std::move(y), {x, w, bias},
                            [xn, wn, bn, m, k, n](detail::Node<T>& self) {
    if (xn->requires_grad) {
      Tensor<T> gx = Tensor<T>::uninitialized({m, k});
      ppgfm::detail::gemm(false, false, m, k, n, T{1}, self.grad.data(), n,
                          wn->value.data(), k, T{0}, gx.data(), k);
      xn->accumulate(gx);
    }
    if (wn->requires_grad) {
      Tensor<T> gw = Tensor<T>::uninitialized({n, k});
      ppgfm::detail::gemm(true, false, n, k, m, T{1}, self.grad.data(), n,
                          xn->value.data(), k, T{0}, gw.data(), k);
      wn->accumulate(gw);
    }
    if (bn->requires_grad) {
      Tensor<T> gb({n});
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
      bn->accumulate(gb);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace detail {

inline int64_t conv_out_len(int64_t len, int64_t k, int64_t stride, int64_t pad) {
  return (len + 2 * pad - k) / stride + 1;
}

/// Valid output range [j0, j1) for source index j*stride + off in [0, len).
inline std::pair<int64_t, int64_t> col_range(int64_t off, int64_t stride,
                                             int64_t len, int64_t l_out) {
  int64_t j0 = 0;
  if (off < 0) j0 = (-off + stride - 1) / stride;
  int64_t j1 = 0;
  if (len - 1 - off >= 0) j1 = std::min(l_out, (len - 1 - off) / stride + 1);
  return {std::min(j0, l_out), std::max(j1, std::min(j0, l_out))};
}

/// Unfold x[b] into columns: col[(c*k + t), b*l_out + j] = x[b, c, j*s + t - p].
/// Bounds are hoisted out of the inner loop; stride 1 rows are straight copies.
inline int64_t batch_grain(int64_t work_per_item) {
  return std::max<int64_t>(1, (int64_t{1} << 16) / std::max<int64_t>(1, work_per_item));
}

template <typename T>
void im2col(const T* x, int64_t batch, int64_t ch, int64_t len, int64_t k,
            int64_t stride, int64_t pad, int64_t l_out, T* col) {
  const int64_t cols = batch * l_out;
  parallel_over(batch, batch_grain(ch * k * l_out), [&](int64_t b_lo, int64_t b_hi) {
    for (int64_t b = b_lo; b < b_hi; ++b) {
      const T* xb = x + b * ch * len;
      for (int64_t c = 0; c < ch; ++c) {
        for (int64_t t = 0; t < k; ++t) {
          T* row = col + (c * k + t) * cols + b * l_out;
          const int64_t off = t - pad;
          const auto [j0, j1] = col_range(off, stride, len, l_out);
          std::fill(row, row + j0, T{0});
          const T* src = xb + c * len + j0 * stride + off;
          if (stride == 1) {
            std::copy(src, src + (j1 - j0), row + j0);
          } else {
            for (int64_t j = j0; j < j1; ++j) row[j] = src[(j - j0) * stride];
          }
          std::fill(row + j1, row + l_out, T{0});
        }
      }
    }
  });
}

template <typename T>
void col2im(const T* col, int64_t batch, int64_t ch, int64_t len, int64_t k,
            int64_t stride, int64_t pad, int64_t l_out, T* x) {
  const int64_t cols = batch * l_out;
  parallel_over(batch, batch_grain(ch * k * l_out), [&](int64_t b_lo, int64_t b_hi) {
    for (int64_t b = b_lo; b < b_hi; ++b) {
      T* xb = x + b * ch * len;
      for (int64_t c = 0; c < ch; ++c) {
        for (int64_t t = 0; t < k; ++t) {
          const T* row = col + (c * k + t) * cols + b * l_out;
          const int64_t off = t - pad;
          const auto [j0, j1] = col_range(off, stride, len, l_out);
          T* dst = xb + c * len + j0 * stride + off;
          if (stride == 1) {
            for (int64_t j = j0; j < j1; ++j) dst[j - j0] += row[j];
          } else {
            for (int64_t j = j0; j < j1; ++j) dst[(j - j0) * stride] += row[j];
          }
        }
      }
    }
  });
}

}  // namespace detail

/// 1-D convolution. x: [B, C_in, L], w: [C_out, C_in, K], bias: [C_out].
/// Output length is floor((L + 2*pad - K) / stride) + 1.
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& bias,
              int64_t stride, int64_t pad) {
  const auto& xs = x.value().shape();
  const auto& ws = w.value().shape();
  if (xs.size() != 3 || ws.size() != 3 || xs[1] != ws[1])
    throw std::invalid_argument("conv1d: expects x [B,C,L], w [O,C,K]");
  const int64_t batch = xs[0], ch_in = xs[1], len = xs[2];
  const int64_t ch_out = ws[0], k = ws[2];
  if (k > len + 2 * pad) throw std::invalid_argument("conv1d: kernel larger than padded input");
  if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
  const int64_t l_out = detail::conv_out_len(len, k, stride, pad);
  if (l_out < 1) throw std::invalid_argument("conv1d: empty output");
  if (bias.value().numel() != ch_out) throw std::invalid_argument("conv1d: bias size mismatch");

  const int64_t cols = batch * l_out;
  auto col = std::make_shared<Tensor<T>>(Tensor<T>::uninitialized({ch_in * k, cols}));
  detail::im2col(x.value().data(), batch, ch_in, len, k, stride, pad, l_out, col->data());

  Tensor<T> flat = Tensor<T>::uninitialized({ch_out, cols});
  ppgfm::detail::gemm(false, false, ch_out, cols, ch_in * k, T{1}, w.value().data(),
                      ch_in * k, col->data(), cols, T{0}, flat.data(), cols);

  Tensor<T> y = Tensor<T>::uninitialized({batch, ch_out, l_out});
  detail::parallel_over(batch, detail::batch_grain(ch_out * l_out),
                        [&](int64_t b_lo, int64_t b_hi) {
    for (int64_t b = b_lo; b < b_hi; ++b)
      for (int64_t o = 0; o < ch_out; ++o) {
        const T* src = flat.data() + o * cols + b * l_out;
        const T bv = bias.value()[o];
        T* dst = y.data() + (b * ch_out + o) * l_out;
        for (int64_t j = 0; j < l_out; ++j) dst[j] = src[j] + bv;
      }
  });

  auto xn = x.node_ptr();
  auto wn = w.node_ptr();
  auto bn = bias.node_ptr();
  return detail::make_op<T>(
      std::move(y), {x, w, bias},
      [xn, wn, bn, col, batch, ch_in, len, ch_out, k, stride, pad, l_out,
       cols](ad::detail::Node<T>& self) {
        // Gather upstream grad into [C_out, B*L_out] to mirror the forward gemm.
        Tensor<T> gflat = Tensor<T>::uninitialized({ch_out, cols});
        detail::parallel_over(batch, detail::batch_grain(ch_out * l_out),
                              [&](int64_t b_lo, int64_t b_hi) {
          for (int64_t b = b_lo; b < b_hi; ++b)
            for (int64_t o = 0; o < ch_out; ++o) {
              const T* src = self.grad.data() + (b * ch_out + o) * l_out;
              T* dst = gflat.data() + o * cols + b * l_out;
              for (int64_t j = 0; j < l_out; ++j) dst[j] = src[j];
            }
        });
        if (wn->requires_grad) {
          Tensor<T> gw = Tensor<T>::uninitialized({ch_out, ch_in * k});
          ppgfm::detail::gemm(false, true, ch_out, ch_in * k, cols, T{1}, gflat.data(),
                              cols, col->data(), cols, T{0}, gw.data(), ch_in * k);
          wn->accumulate(gw.reshaped({ch_out, ch_in, k}));
        }
        if (bn->requires_grad) {
          Tensor<T> gb({ch_out});
          for (int64_t o = 0; o < ch_out; ++o) {
            T s{};
            const T* row = gflat.data() + o * cols;
            for (int64_t j = 0; j < cols; ++j) s += row[j];
            gb[o] = s;
          }
          bn->accumulate(gb);
        }
        if (xn->requires_grad) {
          Tensor<T> gcol = Tensor<T>::uninitialized({ch_in * k, cols});
          ppgfm::detail::gemm(true, false, ch_in * k, cols, ch_out, T{1},
                              wn->value.data(), ch_in * k, gflat.data(), cols, T{0},
                              gcol.data(), cols);
          Tensor<T> gx({batch, ch_in, len});
          detail::col2im(gcol.data(), batch, ch_in, len, k, stride, pad, l_out, gx.data());
          xn->accumulate(gx);
        }
      });
}

// ---------------------------------------------------------------------------
// Batch norm, dropout, max pool
// ---------------------------------------------------------------------------

/// Running statistics live outside the graph and are updated in train mode.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = static_cast<T>(0.1);
  T eps = static_cast<T>(1e-5);
};

/// Batch normalization over [B, C, L]; statistics per channel across (B, L).
/// Train mode requires B >= 2 and updates the running stats in `state`.
template <typename T>
Var<T> batchnorm1d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                   BatchNormState<T>& state, bool training) {
  const auto& xs = x.value().shape();
  if (xs.size() != 3) throw std::invalid_argument("batchnorm1d: expects [B,C,L]");
  const int64_t batch = xs[0], ch = xs[1], len = xs[2];
  if (gamma.value().numel() != ch || beta.value().numel() != ch)
    throw std::invalid_argument("batchnorm1d: affine size mismatch");
  if (training && batch < 2)
    throw std::invalid_argument("batchnorm1d: train mode needs batch >= 2");

  const int64_t m = batch * len;
  Tensor<T> mean({ch});
  Tensor<T> invstd({ch});
  if (training) {
    detail::parallel_over(ch, detail::batch_grain(m), [&](int64_t c_lo, int64_t c_hi) {
      for (int64_t c = c_lo; c < c_hi; ++c) {
        double s = 0.0, sq = 0.0;
        for (int64_t b = 0; b < batch; ++b) {
          const T* p = x.value().data() + (b * ch + c) * len;
          for (int64_t j = 0; j < len; ++j) {
            s += p[j];
            sq += static_cast<double>(p[j]) * p[j];
          }
        }
        const double mu = s / static_cast<double>(m);
        const double var_biased = std::max(0.0, sq / static_cast<double>(m) - mu * mu);
        mean[c] = static_cast<T>(mu);
        invstd[c] = static_cast<T>(1.0 / std::sqrt(var_biased + static_cast<double>(state.eps)));
        const double var_unbiased =
            m > 1 ? var_biased * static_cast<double>(m) / static_cast<double>(m - 1)
                  : var_biased;
        state.running_mean[c] = (T{1} - state.momentum) * state.running_mean[c] +
                                state.momentum * static_cast<T>(mu);
        state.running_var[c] = (T{1} - state.momentum) * state.running_var[c] +
                               state.momentum * static_cast<T>(var_unbiased);
      }
    });
  } else {
    for (int64_t c = 0; c < ch; ++c) {
      mean[c] = state.running_mean[c];
      invstd[c] = T{1} / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  auto xhat = std::make_shared<Tensor<T>>(Tensor<T>::uninitialized({batch, ch, len}));
  Tensor<T> y = Tensor<T>::uninitialized({batch, ch, len});
  detail::parallel_over(batch, detail::batch_grain(ch * len),
                        [&](int64_t b_lo, int64_t b_hi) {
    for (int64_t b = b_lo; b < b_hi; ++b)
      for (int64_t c = 0; c < ch; ++c) {
        const T* p = x.value().data() + (b * ch + c) * len;
        T* h = xhat->data() + (b * ch + c) * len;
        T* q = y.data() + (b * ch + c) * len;
        const T mu = mean[c], is = invstd[c];
        const T g = gamma.value()[c], bt = beta.value()[c];
        for (int64_t j = 0; j < len; ++j) {
          h[j] = (p[j] - mu) * is;
          q[j] = g * h[j] + bt;
        }
      }
  });

  auto xn = x.node_ptr();
  auto gn = gamma.node_ptr();
  auto bn = beta.node_ptr();
  auto saved_invstd = std::make_shared<Tensor<T>>(invstd);
  return detail::make_op<T>(
      std::move(y), {x, gamma, beta},
      [xn, gn, bn, xhat, saved_invstd, batch, ch, len, m, training](detail::Node<T>& self) {
        Tensor<T> dgamma = Tensor<T>::uninitialized({ch});
        Tensor<T> dbeta = Tensor<T>::uninitialized({ch});
        detail::parallel_over(ch, detail::batch_grain(m), [&](int64_t c_lo, int64_t c_hi) {
          for (int64_t c = c_lo; c < c_hi; ++c) {
            double sg = 0.0, sb = 0.0;
            for (int64_t b = 0; b < batch; ++b) {
              const T* g = self.grad.data() + (b * ch + c) * len;
              const T* h = xhat->data() + (b * ch + c) * len;
              for (int64_t j = 0; j < len; ++j) {
                sg += static_cast<double>(g[j]) * h[j];
                sb += g[j];
              }
            }
            dgamma[c] = static_cast<T>(sg);
            dbeta[c] = static_cast<T>(sb);
          }
        });
        if (gn->requires_grad) gn->accumulate(dgamma);
        if (bn->requires_grad) bn->accumulate(dbeta);
        if (xn->requires_grad) {
          Tensor<T> gx = Tensor<T>::uninitialized({batch, ch, len});
          detail::parallel_over(ch, detail::batch_grain(m),
                                [&](int64_t c_lo, int64_t c_hi) {
            for (int64_t c = c_lo; c < c_hi; ++c) {
              const T scale = gn->value[c] * (*saved_invstd)[c];
              const T mean_dy = dbeta[c] / static_cast<T>(m);
              const T mean_dyxh = dgamma[c] / static_cast<T>(m);
              for (int64_t b = 0; b < batch; ++b) {
                const T* g = self.grad.data() + (b * ch + c) * len;
                const T* h = xhat->data() + (b * ch + c) * len;
                T* o = gx.data() + (b * ch + c) * len;
                if (training) {
                  for (int64_t j = 0; j < len; ++j)
                    o[j] = scale * (g[j] - mean_dy - h[j] * mean_dyxh);
                } else {
                  for (int64_t j = 0; j < len; ++j) o[j] = scale * g[j];
                }
              }
            }
          });
          xn->accumulate(gx);
        }
      });
}

/// Inverted dropout: train mode zeroes with probability p and scales the
/// survivors by 1/(1-p); eval mode is the identity.
template <typename T>
Var<T> dropout(const Var<T>& x, double p, bool training, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1)");
  if (!training || p == 0.0) {
    Tensor<T> y = x.value();
    auto xn = x.node_ptr();
    return detail::make_op<T>(std::move(y), {x},
                              [xn](detail::Node<T>& self) { xn->accumulate(self.grad); });
  }
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<Tensor<T>>(Tensor<T>::uninitialized(x.value().shape()));
  // 32-bit threshold draws, two elements per generator call: far cheaper
  // than a floating-point distribution at activation-map sizes.
  const auto threshold = static_cast<uint32_t>(p * 4294967296.0);
  Tensor<T> y = Tensor<T>::uninitialized(x.value().shape());
  const int64_t n = y.numel();
  const T* src = x.value().data();
  T* m = mask->data();
  T* dst = y.data();
  uint64_t bits = 0;
  for (int64_t i = 0; i < n; ++i) {
    if ((i & 1) == 0) {
      bits = rng();
    } else {
      bits >>= 32;
    }
    const T mv = static_cast<uint32_t>(bits) >= threshold ? scale : T{0};
    m[i] = mv;
    dst[i] = src[i] * mv;
  }
  auto xn = x.node_ptr();
  return detail::make_op<T>(std::move(y), {x}, [xn, mask](detail::Node<T>& self) {
    Tensor<T> g = Tensor<T>::uninitialized(self.grad.shape());
    const T* up = self.grad.data();
    const T* mk = mask->data();
    T* out = g.data();
    detail::parallel_over(g.numel(), int64_t{1} << 16, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) out[i] = up[i] * mk[i];
    });
    xn->accumulate(g);
  });
}

/// Max pooling over [B, C, L]; padding cells are ignored. Ties route the
/// gradient to the first maximal index.
template <typename T>
Var<T> maxpool1d(const Var<T>& x, int64_t k, int64_t stride, int64_t pad) {
  const auto& xs = x.value().shape();
  if (xs.size() != 3) throw std::invalid_argument("maxpool1d: expects [B,C,L]");
  const int64_t batch = xs[0], ch = xs[1], len = xs[2];
  const int64_t l_out = detail::conv_out_len(len, k, stride, pad);
  if (l_out < 1) throw std::invalid_argument("maxpool1d: empty output");

  Tensor<T> y = Tensor<T>::uninitialized({batch, ch, l_out});
  auto argmax = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(batch * ch * l_out));
  const bool same_k3 = k == 3 && stride == 1 && pad == 1 && len >= 2;
  detail::parallel_over(batch, detail::batch_grain(ch * len * k),
                        [&, same_k3](int64_t b_lo, int64_t b_hi) {
  for (int64_t b = b_lo; b < b_hi; ++b)
    for (int64_t c = 0; c < ch; ++c) {
      const T* p = x.value().data() + (b * ch + c) * len;
      T* out = y.data() + (b * ch + c) * l_out;
      int64_t* am = argmax->data() + (b * ch + c) * l_out;
      if (same_k3) {
        // The model's length-preserving pooling; unrolled interior.
        out[0] = p[0] >= p[1] ? p[0] : p[1];
        am[0] = p[0] >= p[1] ? 0 : 1;
        for (int64_t j = 1; j + 1 < len; ++j) {
          int64_t best = j - 1;
          T bv = p[j - 1];
          if (p[j] > bv) {
            bv = p[j];
            best = j;
          }
          if (p[j + 1] > bv) {
            bv = p[j + 1];
            best = j + 1;
          }
          out[j] = bv;
          am[j] = best;
        }
        out[len - 1] = p[len - 2] >= p[len - 1] ? p[len - 2] : p[len - 1];
        am[len - 1] = p[len - 2] >= p[len - 1] ? len - 2 : len - 1;
        continue;
      }
      for (int64_t j = 0; j < l_out; ++j) {
        const int64_t start = j * stride - pad;
        const int64_t lo = start < 0 ? 0 : start;
        const int64_t hi = std::min(len, start + k);
        if (lo >= hi) throw std::invalid_argument("maxpool1d: window fully padded");
        int64_t best = lo;
        T bv = p[lo];
        for (int64_t idx = lo + 1; idx < hi; ++idx)
          if (p[idx] > bv) {
            bv = p[idx];
            best = idx;
          }
        out[j] = bv;
        am[j] = best;
      }
    }
  });

  auto xn = x.node_ptr();
  return detail::make_op<T>(std::move(y), {x},
                            [xn, argmax, batch, ch, len, l_out](detail::Node<T>& self) {
    Tensor<T> gx({batch, ch, len});
    detail::parallel_over(batch, detail::batch_grain(ch * l_out),
                          [&](int64_t b_lo, int64_t b_hi) {
      for (int64_t b = b_lo; b < b_hi; ++b)
        for (int64_t c = 0; c < ch; ++c) {
          const T* g = self.grad.data() + (b * ch + c) * l_out;
          T* o = gx.data() + (b * ch + c) * len;
          for (int64_t j = 0; j < l_out; ++j)
            o[(*argmax)[static_cast<size_t>((b * ch + c) * l_out + j)]] += g[j];
        }
    });
    xn->accumulate(gx);
  });
}

// ---------------------------------------------------------------------------
// Reductions and row-wise ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  T s{};
  for (int64_t i = 0; i < a.value().numel(); ++i) s += a.value()[i];
  auto an = a.node_ptr();
  return detail::make_op<T>(Tensor<T>::scalar(s), {a}, [an](detail::Node<T>& self) {
    Tensor<T> g(an->value.shape(), self.grad[0]);
    an->accumulate(g);
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  const int64_t n = a.value().numel();
  if (n == 0) throw std::invalid_argument("mean_all: empty tensor");
  T s{};
  for (int64_t i = 0; i < n; ++i) s += a.value()[i];
  auto an = a.node_ptr();
  return detail::make_op<T>(Tensor<T>::scalar(s / static_cast<T>(n)), {a},
                            [an, n](detail::Node<T>& self) {
    Tensor<T> g(an->value.shape(), self.grad[0] / static_cast<T>(n));
    an->accumulate(g);
  });
}

/// [B, C, L] -> [B, C], arithmetic mean over the trailing axis.
template <typename T>
Var<T> mean_lastdim(const Var<T>& a) {
  const auto& s = a.value().shape();
  if (s.size() != 3) throw std::invalid_argument("mean_lastdim: expects [B,C,L]");
  const int64_t rows = s[0] * s[1], len = s[2];
  Tensor<T> y({s[0], s[1]});
  for (int64_t r = 0; r < rows; ++r) {
    T acc{};
    const T* p = a.value().data() + r * len;
    for (int64_t j = 0; j < len; ++j) acc += p[j];
    y[r] = acc / static_cast<T>(len);
  }
  auto an = a.node_ptr();
  return detail::make_op<T>(std::move(y), {a}, [an, rows, len](detail::Node<T>& self) {
    Tensor<T> g = Tensor<T>::uninitialized(an->value.shape());
    for (int64_t r = 0; r < rows; ++r) {
      const T gv = self.grad[r] / static_cast<T>(len);
      T* o = g.data() + r * len;
      for (int64_t j = 0; j < len; ++j) o[j] = gv;
    }
    an->accumulate(g);
  });
}

/// [m, n] -> [m], sum over columns.
template <typename T>
Var<T> sum_rows(const Var<T>& a) {
  const auto& s = a.value().shape();
  if (s.size() != 2) throw std::invalid_argument("sum_rows: expects [m,n]");
  const int64_t m = s[0], n = s[1];
  Tensor<T> y = Tensor<T>::uninitialized({m});
  for (int64_t i = 0; i < m; ++i) {
    T acc{};
    const T* p = a.value().data() + i * n;
    for (int64_t j = 0; j < n; ++j) acc += p[j];
    y[i] = acc;
  }
  auto an = a.node_ptr();
  return detail::make_op<T>(std::move(y), {a}, [an, m, n](detail::Node<T>& self) {
    Tensor<T> g = Tensor<T>::uninitialized({m, n});
    for (int64_t i = 0; i < m; ++i) {
      T* o = g.data() + i * n;
      for (int64_t j = 0; j < n; ++j) o[j] = self.grad[i];
    }
    an->accumulate(g);
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  const auto& s = a.value().shape();
  if (s.size() != 2) throw std::invalid_argument("softmax_rows: expects [m,n]");
  const int64_t m = s[0], n = s[1];
  Tensor<T> y = Tensor<T>::uninitialized({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const T* p = a.value().data() + i * n;
    T mx = p[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, p[j]);
    T z{};
    T* o = y.data() + i * n;
    for (int64_t j = 0; j < n; ++j) {
      o[j] = std::exp(p[j] - mx);
      z += o[j];
    }
    for (int64_t j = 0; j < n; ++j) o[j] /= z;
  }
  auto an = a.node_ptr();
  auto saved = std::make_shared<Tensor<T>>(y);
  return detail::make_op<T>(std::move(y), {a}, [an, saved, m, n](detail::Node<T>& self) {
    Tensor<T> g = Tensor<T>::uninitialized({m, n});
    for (int64_t i = 0; i < m; ++i) {
      const T* gy = self.grad.data() + i * n;
      const T* sy = saved->data() + i * n;
      T dot{};
      for (int64_t j = 0; j < n; ++j) dot += gy[j] * sy[j];
      T* o = g.data() + i * n;
      for (int64_t j = 0; j < n; ++j) o[j] = sy[j] * (gy[j] - dot);
    }
    an->accumulate(g);
  });
}

/// [m, n] -> [m], numerically stable log-sum-exp over columns.
template <typename T>
Var<T> logsumexp_rows(const Var<T>& a) {
  const auto& s = a.value().shape();
  if (s.size() != 2) throw std::invalid_argument("logsumexp_rows: expects [m,n]");
  const int64_t m = s[0], n = s[1];
  Tensor<T> y = Tensor<T>::uninitialized({m});
  auto soft = std::make_shared<Tensor<T>>(Tensor<T>::uninitialized({m, n}));
  for (int64_t i = 0; i < m; ++i) {
    const T* p = a.value().data() + i * n;
    T mx = p[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, p[j]);
    T z{};
    T* w = soft->data() + i * n;
    for (int64_t j = 0; j < n; ++j) {
      w[j] = std::exp(p[j] - mx);
      z += w[j];
    }
    for (int64_t j = 0; j < n; ++j) w[j] /= z;
    y[i] = mx + std::log(z);
  }
  auto an = a.node_ptr();
  return detail::make_op<T>(std::move(y), {a}, [an, soft, m, n](detail::Node<T>& self) {
    Tensor<T> g = Tensor<T>::uninitialized({m, n});
    for (int64_t i = 0; i < m; ++i) {
      const T gi = self.grad[i];
      const T* w = soft->data() + i * n;
      T* o = g.data() + i * n;
      for (int64_t j = 0; j < n; ++j) o[j] = gi * w[j];
    }
    an->accumulate(g);
  });
}

/// Scale every row of [m, n] to unit L2 norm. Rows of (near-)zero norm are
/// rejected: downstream cosine similarities would be meaningless.
template <typename T>
Var<T> l2_normalize_rows(const Var<T>& a) {
  const auto& s = a.value().shape();
  if (s.size() != 2) throw std::invalid_argument("l2_normalize_rows: expects [m,n]");
  const int64_t m = s[0], n = s[1];
  Tensor<T> y = Tensor<T>::uninitialized({m, n});
  auto norms = std::make_shared<Tensor<T>>(Tensor<T>::uninitialized({m}));
  for (int64_t i = 0; i < m; ++i) {
    const T* p = a.value().data() + i * n;
    T sq{};
    for (int64_t j = 0; j < n; ++j) sq += p[j] * p[j];
    const T r = std::sqrt(sq);
    if (!(r > static_cast<T>(1e-30)))
      throw std::domain_error("l2_normalize_rows: zero-norm row " + std::to_string(i));
    (*norms)[i] = r;
    T* o = y.data() + i * n;
    for (int64_t j = 0; j < n; ++j) o[j] = p[j] / r;
  }
  auto an = a.node_ptr();
  auto saved = std::make_shared<Tensor<T>>(y);
  return detail::make_op<T>(std::move(y), {a},
                            [an, saved, norms, m, n](detail::Node<T>& self) {
    Tensor<T> g = Tensor<T>::uninitialized({m, n});
    for (int64_t i = 0; i < m; ++i) {
      const T* gy = self.grad.data() + i * n;
      const T* yy = saved->data() + i * n;
      const T r = (*norms)[i];
      T dot{};
      for (int64_t j = 0; j < n; ++j) dot += gy[j] * yy[j];
      T* o = g.data() + i * n;
      for (int64_t j = 0; j < n; ++j) o[j] = (gy[j] - yy[j] * dot) / r;
    }
    an->accumulate(g);
  });
}

/// Stack E column vectors (each [m] or [m,1]) into an [m, E] matrix.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& cols) {
  if (cols.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int64_t m = cols[0].value().dim(0);
  const int64_t e = static_cast<int64_t>(cols.size());
  for (const auto& c : cols)
    if (c.value().numel() != m)
      throw std::invalid_argument("concat_cols: column length mismatch");
  Tensor<T> y = Tensor<T>::uninitialized({m, e});
  for (int64_t j = 0; j < e; ++j)
    for (int64_t i = 0; i < m; ++i) y[i * e + j] = cols[static_cast<size_t>(j)].value()[i];
  std::vector<std::shared_ptr<detail::Node<T>>> nodes;
  nodes.reserve(cols.size());
  for (const auto& c : cols) nodes.push_back(c.node_ptr());
  return detail::make_op<T>(std::move(y), cols, [nodes, m, e](detail::Node<T>& self) {
    for (int64_t j = 0; j < e; ++j) {
      auto& nd = nodes[static_cast<size_t>(j)];
      if (!nd->requires_grad) continue;
      Tensor<T> g = Tensor<T>::uninitialized(nd->value.shape());
      for (int64_t i = 0; i < m; ++i) g[i] = self.grad[i * e + j];
      nd->accumulate(g);
    }
  });
}

}  // namespace ppgfm::ad
