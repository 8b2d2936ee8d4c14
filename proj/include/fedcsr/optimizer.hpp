#pragma once

#include <cmath>
#include <cstdint>

#include "fedcsr/tensor.hpp"

namespace fedcsr {

/// Adam with bias correction; state persists for the life of the client.
class Adam {
 public:
  Adam() = default;
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(NamedTensors& params, const NamedTensors& grads) {
    params.require_same_layout(grads, "adam");
    if (m_.empty()) {
      m_ = params.zeros_like();
      v_ = params.zeros_like();
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto m = m_.begin();
    auto v = v_.begin();
    auto g = grads.begin();
    for (auto& [name, p] : params) {
      m->second = beta1_ * m->second + (1.0 - beta1_) * g->second;
      v->second = beta2_ * v->second + (1.0 - beta2_) * g->second.cwiseAbs2();
      p.array() -= lr_ * (m->second.array() / c1) / ((v->second.array() / c2).sqrt() + eps_);
      ++m;
      ++v;
      ++g;
    }
  }

  [[nodiscard]] double lr() const { return lr_; }
  [[nodiscard]] std::int64_t steps() const { return t_; }
  [[nodiscard]] const NamedTensors& first_moment() const { return m_; }
  [[nodiscard]] const NamedTensors& second_moment() const { return v_; }

  void restore(NamedTensors m, NamedTensors v, std::int64_t t) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::int64_t t_ = 0;
  NamedTensors m_;
  NamedTensors v_;
};

}  // namespace fedcsr
