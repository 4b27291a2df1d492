#include "attrib3d/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "attrib3d/errors.hpp"

namespace attrib3d::nn {

double cosine_lr(double base, std::int64_t t, std::int64_t total) {
  if (total <= 0) return base;
  const double frac = static_cast<double>(std::clamp<std::int64_t>(t, 0, total)) / static_cast<double>(total);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void AdamW<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) throw StateError("adamw: parameter " + std::to_string(i) + " has no gradient");
  }
  const double lr = current_lr();
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_ + 1));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_ + 1));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].data();
    const auto& g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      m[k] = static_cast<T>(b1 * m[k] + (1.0 - b1) * gk);
      v[k] = static_cast<T>(b2 * v[k] + (1.0 - b2) * gk * gk);
      const double mhat = m[k] / c1, vhat = v[k] / c2;
      const double old = p[k];
      p[k] = static_cast<T>(old - lr * (mhat / (std::sqrt(vhat) + config_.eps)) - lr * config_.weight_decay * old);
    }
  }
  ++t_;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace attrib3d::nn
