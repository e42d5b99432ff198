#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "tensor.hpp"

namespace factprobe::nn {

struct GradCheckResult {
  double max_relative_error = 0;
  std::string worst_parameter;
  Eigen::Index worst_index = -1;
  std::size_t checked = 0;
};

// Gradients smaller than this are compared on an absolute scale.
inline constexpr double kGradCheckFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
}

// Compares analytic gradients against central differences
// (f(p + eps) - f(p - eps)) / 2 eps for every trainable scalar.
// `loss(net, backward)` returns the scalar loss; with backward = true it must
// also accumulate gradients into zeroed buffers.
template <typename Net, typename LossFn>
GradCheckResult grad_check(Net& net, LossFn&& loss, double eps = 1e-5) {
  zero_grad(net);
  loss(net, true);
  GradCheckResult result;
  net.visit([&](const std::string& name, auto& p) {
    if (!p.trainable) return;
    using S = std::remove_reference_t<decltype(p.value(0, 0))>;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      S& x = p.value.data()[i];
      const S saved = x;
      x = saved + static_cast<S>(eps);
      const double up = static_cast<double>(loss(net, false));
      x = saved - static_cast<S>(eps);
      const double down = static_cast<double>(loss(net, false));
      x = saved;
      const double numeric = (up - down) / (2 * eps);
      const double err = relative_error(static_cast<double>(p.grad.data()[i]), numeric);
      ++result.checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = name;
        result.worst_index = i;
      }
    }
  }, "");
  return result;
}

}  // namespace factprobe::nn
