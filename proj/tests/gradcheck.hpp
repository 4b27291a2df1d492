#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "attrib3d/rng.hpp"
#include "attrib3d/tensor.hpp"

namespace testutil {

using attrib3d::nn::Tensor;
using TD = Tensor<double>;

struct GradCheckResult {
  double max_rel_err = 0;  // over elements whose absolute error exceeds the floor
  double max_abs_err = 0;
  std::size_t checked = 0;
  bool pass(double rel = 1e-4) const { return max_rel_err < rel; }
};

inline TD random_tensor(const attrib3d::nn::Shape& shape, attrib3d::Rng& rng, double scale = 1.0) {
  std::vector<double> v(attrib3d::nn::numel(shape));
  for (auto& x : v) x = rng.normal() * scale;
  return TD::from(shape, std::move(v), true);
}

/// Central differences (eps 1e-5) of a scalar-valued `loss` against every
/// element of every input; errors below `abs_floor` count as exact.
/// `max_elems` > 0 limits how many elements per input are probed.
inline GradCheckResult grad_check(const std::vector<TD>& inputs, const std::function<TD()>& loss,
                                  double abs_floor = 1e-6, std::size_t max_elems = 0, double eps = 1e-5) {
  for (auto t : inputs) t.zero_grad();
  TD l = loss();
  attrib3d::nn::backward(l);
  GradCheckResult r;
  for (auto t : inputs) {
    const std::vector<double> analytic = t.grad();
    const std::size_t n = t.numel();
    const std::size_t stride = (max_elems > 0 && n > max_elems) ? n / max_elems : 1;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = t.data()[i];
      double plus, minus;
      {
        attrib3d::nn::NoGradGuard g;
        t.data()[i] = orig + eps;
        plus = loss().item();
        t.data()[i] = orig - eps;
        minus = loss().item();
        t.data()[i] = orig;
      }
      const double numeric = (plus - minus) / (2 * eps);
      const double abs_err = std::abs(numeric - analytic[i]);
      r.max_abs_err = std::max(r.max_abs_err, abs_err);
      if (abs_err > abs_floor) {
        r.max_rel_err = std::max(r.max_rel_err, abs_err / std::max(std::abs(numeric), std::abs(analytic[i])));
      }
      ++r.checked;
    }
  }
  return r;
}

/// sum(out * w) for a fixed random w, so every output element gets a
/// distinct upstream gradient.
inline TD weighted_sum(const TD& out, std::uint64_t seed) {
  attrib3d::Rng rng(seed);
  std::vector<double> w(out.numel());
  for (auto& x : w) x = rng.normal();
  return attrib3d::nn::sum(attrib3d::nn::mul(out, TD::from(out.shape(), std::move(w))));
}

}  // namespace testutil
