#pragma once

#include <cstdint>
#include <vector>

#include "attrib3d/tensor.hpp"

namespace attrib3d::nn {

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t total_steps = 1;  // cosine horizon T
};

/// lr_t = base * 0.5 * (1 + cos(pi * t / T)), t clamped to [0, T].
double cosine_lr(double base, std::int64_t t, std::int64_t total);

/// AdamW with decoupled weight decay and bias-corrected moments.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, AdamWConfig config);

  /// Learning rate the next step() will use.
  double current_lr() const { return cosine_lr(config_.lr, t_, config_.total_steps); }
  /// p <- p - lr * (m_hat / (sqrt(v_hat) + eps)) - lr * wd * p, then t += 1.
  /// Throws StateError if a parameter has no gradient buffer.
  void step();
  /// Allocates and zero-fills every parameter gradient.
  void zero_grad();

  std::int64_t steps() const { return t_; }
  const AdamWConfig& config() const { return config_; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  std::vector<Tensor<T>> params_;
  AdamWConfig config_;
  std::vector<std::vector<T>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace attrib3d::nn
