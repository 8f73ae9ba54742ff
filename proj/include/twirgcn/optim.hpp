#pragma once

// First-order parameter updates over Tensor::grad. Every step rejects
// non-finite gradients before touching any parameter.

#include <cmath>
#include <span>
#include <vector>

#include "twirgcn/error.hpp"
#include "twirgcn/tensor.hpp"

namespace twirgcn {

inline void require_finite_grads(std::span<Tensor* const> params) {
  for (const Tensor* p : params)
    for (double g : p->grad)
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient");
}

inline void zero_grads(std::span<Tensor* const> params) {
  for (Tensor* p : params) p->zero_grad();
}

// p <- p - lr * g
inline void sgd_step(std::span<Tensor* const> params, double lr) {
  require_finite_grads(params);
  for (Tensor* p : params) {
    if (!p->requires_grad) continue;
    for (std::size_t i = 0; i < p->values.size(); ++i) p->values[i] -= lr * p->grad[i];
  }
}

class Adam {
 public:
  explicit Adam(std::vector<Tensor*> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (Tensor* p : params_) {
      m_.emplace_back(p->values.size(), 0.0);
      v_.emplace_back(p->values.size(), 0.0);
    }
  }

  void step(double lr) {
    require_finite_grads(params_);
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = *params_[k];
      if (!p.requires_grad) continue;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.values.size(); ++i) {
        const double g = p.grad[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        p.values[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

  const std::vector<Tensor*>& params() const { return params_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

class Adagrad {
 public:
  explicit Adagrad(std::vector<Tensor*> params, double eps = 1e-10)
      : params_(std::move(params)), eps_(eps) {
    for (Tensor* p : params_) acc_.emplace_back(p->values.size(), 0.0);
  }

  void step(double lr) {
    require_finite_grads(params_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = *params_[k];
      if (!p.requires_grad) continue;
      auto& a = acc_[k];
      for (std::size_t i = 0; i < p.values.size(); ++i) {
        const double g = p.grad[i];
        a[i] += g * g;
        p.values[i] -= lr * g / (std::sqrt(a[i]) + eps_);
      }
    }
  }

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> acc_;
  double eps_;
};

}  // namespace twirgcn
