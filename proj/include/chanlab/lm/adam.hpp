#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace chanlab::lm {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam without weight decay. One instance per parameter
// tensor; step() must always see the same tensor size.
class Adam {
 public:
  explicit Adam(std::size_t size, AdamOptions options = {})
      : options_(options), m_(size, 0.0), v_(size, 0.0) {}

  void step(std::span<double> param, std::span<const double> grad, double lr) {
    if (param.size() != m_.size() || grad.size() != m_.size()) {
      throw std::invalid_argument("Adam::step size mismatch");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < param.size(); ++i) {
      m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * grad[i];
      v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * grad[i] * grad[i];
      const double m_hat = m_[i] / c1;
      const double v_hat = v_[i] / c2;
      param[i] -= lr * m_hat / (std::sqrt(v_hat) + options_.eps);
    }
  }

  long steps() const { return t_; }

 private:
  AdamOptions options_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

}  // namespace chanlab::lm
