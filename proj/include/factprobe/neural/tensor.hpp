#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "../util.hpp"

namespace factprobe::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// A trainable 2-D tensor with its gradient buffer (same shape).
template <typename S>
struct Parameter {
  Mat<S> value;
  Mat<S> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(Eigen::Index rows, Eigen::Index cols)
      : value(Mat<S>::Zero(rows, cols)), grad(Mat<S>::Zero(rows, cols)) {}

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  Eigen::Index size() const { return value.size(); }

  void zero_grad() { grad.setZero(); }

  // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in = cols
  void init_uniform(Rng& rng) { init_uniform(rng, S(1) / std::sqrt(static_cast<S>(cols()))); }
  void init_uniform(Rng& rng, S bound) {
    for (Eigen::Index c = 0; c < cols(); ++c)
      for (Eigen::Index r = 0; r < rows(); ++r)
        value(r, c) = static_cast<S>((uniform_unit(rng) * 2.0 - 1.0)) * bound;
  }
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

// Parameter traversal: every layer and network exposes
//   template <class F> void visit(F&& f, const std::string& prefix)
// calling f(name, Parameter&) in a fixed order.
template <typename Net>
std::size_t parameter_count(Net& net, bool trainable_only = true) {
  std::size_t n = 0;
  net.visit([&](const std::string&, auto& p) {
    if (!trainable_only || p.trainable) n += static_cast<std::size_t>(p.size());
  }, "");
  return n;
}

template <typename Net>
void zero_grad(Net& net) {
  net.visit([](const std::string&, auto& p) { p.zero_grad(); }, "");
}

template <typename Net>
nlohmann::json parameters_to_json(Net& net) {
  nlohmann::json j = nlohmann::json::object();
  net.visit([&](const std::string& name, auto& p) {
    std::vector<double> values(static_cast<std::size_t>(p.size()));
    for (Eigen::Index i = 0; i < p.size(); ++i) values[static_cast<std::size_t>(i)] = static_cast<double>(p.value.data()[i]);
    j[name] = {{"shape", {p.rows(), p.cols()}}, {"values", std::move(values)}};
  }, "");
  return j;
}

template <typename Net>
void parameters_from_json(Net& net, const nlohmann::json& j) {
  net.visit([&](const std::string& name, auto& p) {
    if (!j.contains(name)) throw DataError("checkpoint lacks parameter " + name);
    const auto& e = j.at(name);
    const auto shape = e.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != p.rows() || shape[1] != p.cols())
      throw DataError("checkpoint parameter " + name + " has the wrong shape");
    const auto values = e.at("values").get<std::vector<double>>();
    for (Eigen::Index i = 0; i < p.size(); ++i) p.value.data()[i] = static_cast<decltype(p.value.data()[0] + 0)>(values[static_cast<std::size_t>(i)]);
  }, "");
}

template <typename S>
S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

// Inverted dropout mask: zeros with probability p, 1/(1-p) otherwise.
template <typename S>
Vec<S> dropout_mask(Eigen::Index n, double p, Rng& rng) {
  Vec<S> m(n);
  const S keep = static_cast<S>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < n; ++i) m(i) = uniform_unit(rng) < p ? S(0) : keep;
  return m;
}

}  // namespace factprobe::nn
