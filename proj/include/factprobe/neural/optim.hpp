#pragma once

#include <cmath>
#include <vector>

#include "tensor.hpp"

namespace factprobe::nn {

// Adam with bias correction. Moment buffers follow the network's visit order.
template <typename S>
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  template <typename Net>
  void step(Net& net) {
    ++t_;
    const S c1 = static_cast<S>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
    const S c2 = static_cast<S>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
    const S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_), lr = static_cast<S>(lr_), eps = static_cast<S>(eps_);
    std::size_t slot = 0;
    net.visit([&](const std::string&, Parameter<S>& p) {
      if (!p.trainable) return;
      if (slot == m_.size()) {
        m_.push_back(Mat<S>::Zero(p.rows(), p.cols()));
        v_.push_back(Mat<S>::Zero(p.rows(), p.cols()));
      }
      auto& m = m_[slot];
      auto& v = v_[slot];
      ++slot;
      m = b1 * m + (S(1) - b1) * p.grad;
      v = b2 * v + (S(1) - b2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }, "");
  }

  double learning_rate() const { return lr_; }
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Mat<S>> m_, v_;
};

}  // namespace factprobe::nn
