#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace phijack {

// Adam over a flat list of parameter buffers.
class Adam {
public:
  Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void attach(const std::vector<size_t>& sizes) {
    m_.clear();
    v_.clear();
    for (size_t n : sizes) {
      m_.emplace_back(n, 0.0);
      v_.emplace_back(n, 0.0);
    }
    t_ = 0;
  }

  // params[i] and grads[i] must have the attached sizes
  void step(const std::vector<double*>& params, const std::vector<const double*>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t b = 0; b < params.size(); ++b) {
      double* p = params[b];
      const double* g = grads[b];
      auto& m = m_[b];
      auto& v = v_[b];
      for (size_t i = 0; i < m.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  double lr() const { return lr_; }

private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace phijack
