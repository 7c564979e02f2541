#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ppgfm/autodiff.hpp"
#include "ppgfm/tensor.hpp"

namespace ppgfm::nn {

/// Per-forward context: training flag plus the RNG that feeds dropout.
template <typename T>
struct Ctx {
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

template <typename T>
struct Param {
  std::string name;
  ad::Var<T> var;
};

/// Non-trainable state that still belongs in a checkpoint (BN running stats).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T>* tensor;
};

namespace detail {

// Kaiming-uniform with a = sqrt(5), the usual conv/linear default:
// bound collapses to 1/sqrt(fan_in) for both weights and biases.
template <typename T>
void init_uniform(Tensor<T>& t, int64_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng));
}

}  // namespace detail

template <typename T>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(int64_t ch_in, int64_t ch_out, int64_t kernel, int64_t stride, int64_t pad,
         std::mt19937_64& rng)
      : stride_(stride), pad_(pad) {
    Tensor<T> w({ch_out, ch_in, kernel});
    Tensor<T> b({ch_out});
    detail::init_uniform(w, ch_in * kernel, rng);
    detail::init_uniform(b, ch_in * kernel, rng);
    w_ = ad::Var<T>::leaf(std::move(w), true);
    b_ = ad::Var<T>::leaf(std::move(b), true);
  }

  ad::Var<T> forward(const ad::Var<T>& x) const {
    return ad::conv1d(x, w_, b_, stride_, pad_);
  }

  void collect(const std::string& prefix, std::vector<Param<T>>& out) {
    out.push_back({prefix + ".w", w_});
    out.push_back({prefix + ".b", b_});
  }

 private:
  ad::Var<T> w_, b_;
  int64_t stride_ = 1, pad_ = 0;
};

template <typename T>
class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  explicit BatchNorm1d(int64_t ch) {
    gamma_ = ad::Var<T>::leaf(Tensor<T>({ch}, T{1}), true);
    beta_ = ad::Var<T>::leaf(Tensor<T>({ch}, T{0}), true);
    state_.running_mean = Tensor<T>({ch}, T{0});
    state_.running_var = Tensor<T>({ch}, T{1});
  }

  ad::Var<T> forward(const ad::Var<T>& x, const Ctx<T>& ctx) {
    return ad::batchnorm1d(x, gamma_, beta_, state_, ctx.training);
  }

  void collect(const std::string& prefix, std::vector<Param<T>>& out) {
    out.push_back({prefix + ".gamma", gamma_});
    out.push_back({prefix + ".beta", beta_});
  }

  void collect_buffers(const std::string& prefix, std::vector<Buffer<T>>& out) {
    out.push_back({prefix + ".running_mean", &state_.running_mean});
    out.push_back({prefix + ".running_var", &state_.running_var});
  }

 private:
  ad::Var<T> gamma_, beta_;
  ad::BatchNormState<T> state_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int64_t in, int64_t out, std::mt19937_64& rng) {
    Tensor<T> w({out, in});
    Tensor<T> b({out});
    detail::init_uniform(w, in, rng);
    detail::init_uniform(b, in, rng);
    w_ = ad::Var<T>::leaf(std::move(w), true);
    b_ = ad::Var<T>::leaf(std::move(b), true);
  }

  ad::Var<T> forward(const ad::Var<T>& x) const { return ad::linear(x, w_, b_); }

  void collect(const std::string& prefix, std::vector<Param<T>>& out) {
    out.push_back({prefix + ".w", w_});
    out.push_back({prefix + ".b", b_});
  }

 private:
  ad::Var<T> w_, b_;
};

template <typename T>
class Dropout {
 public:
  Dropout() = default;
  explicit Dropout(double p) : p_(p) {}

  ad::Var<T> forward(const ad::Var<T>& x, const Ctx<T>& ctx) const {
    if (!ctx.training || p_ == 0.0) return x;
    if (ctx.rng == nullptr) throw std::logic_error("dropout: training ctx without rng");
    return ad::dropout(x, p_, true, *ctx.rng);
  }

 private:
  double p_ = 0.0;
};

template <typename T>
class MaxPool1d {
 public:
  MaxPool1d() = default;
  MaxPool1d(int64_t k, int64_t stride, int64_t pad) : k_(k), stride_(stride), pad_(pad) {}

  ad::Var<T> forward(const ad::Var<T>& x) const {
    return ad::maxpool1d(x, k_, stride_, pad_);
  }

 private:
  int64_t k_ = 3, stride_ = 1, pad_ = 1;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamConfig {
  T lr = static_cast<T>(1e-4);
  T beta1 = static_cast<T>(0.9);
  T beta2 = static_cast<T>(0.999);
  T eps = static_cast<T>(1e-8);
};

/// Bias-corrected Adam over a fixed parameter list. Parameters that never
/// received a gradient this step are treated as zero-gradient; step() zeroes
/// all gradients after applying the update.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Param<T>> params, AdamConfig<T> cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& p : params_) {
      m_.emplace_back(p.var.value().shape());
      v_.emplace_back(p.var.value().shape());
    }
  }

  void step() {
    bool any = false;
    for (auto& p : params_) any = any || p.var.has_grad();
    if (!any) throw std::logic_error("adam: no parameter has a gradient");
    ++t_;
    const T bc1 = T{1} - std::pow(cfg_.beta1, static_cast<T>(t_));
    const T bc2 = T{1} - std::pow(cfg_.beta2, static_cast<T>(t_));
    const T inv_bc1 = T{1} / bc1;
    const T inv_sqrt_bc2 = T{1} / std::sqrt(bc2);
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].var;
      Tensor<T>& w = p.value_mut();
      const bool has = p.has_grad();
      T* wp = w.data();
      T* mp = m_[i].data();
      T* vp = v_[i].data();
      const T* gp = has ? p.grad().data() : nullptr;
      // w -= lr * (m/bc1) / (sqrt(v)/sqrt(bc2) + eps), split so the inner
      // loops stay branch-free and vectorizable.
      ad::detail::parallel_over(w.numel(), int64_t{1} << 15, [&](int64_t lo, int64_t hi) {
        if (has) {
          for (int64_t j = lo; j < hi; ++j) {
            mp[j] = cfg_.beta1 * mp[j] + (T{1} - cfg_.beta1) * gp[j];
            vp[j] = cfg_.beta2 * vp[j] + (T{1} - cfg_.beta2) * gp[j] * gp[j];
            wp[j] -= cfg_.lr * (mp[j] * inv_bc1) /
                     (std::sqrt(vp[j]) * inv_sqrt_bc2 + cfg_.eps);
          }
        } else {
          for (int64_t j = lo; j < hi; ++j) {
            mp[j] = cfg_.beta1 * mp[j];
            vp[j] = cfg_.beta2 * vp[j];
            wp[j] -= cfg_.lr * (mp[j] * inv_bc1) /
                     (std::sqrt(vp[j]) * inv_sqrt_bc2 + cfg_.eps);
          }
        }
      });
      p.zero_grad();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  const AdamConfig<T>& config() const { return cfg_; }

  /// Moment accumulators exposed by parameter index for checkpointing.
  Tensor<T>& moment1(size_t i) { return m_.at(i); }
  Tensor<T>& moment2(size_t i) { return v_.at(i); }
  const std::vector<Param<T>>& params() const { return params_; }

 private:
  std::vector<Param<T>> params_;
  AdamConfig<T> cfg_;
  std::vector<Tensor<T>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace ppgfm::nn
