#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace factprobe {

// Integer confusion counts over `n_labels` classes, indexed [gold][pred].
struct Confusion {
  std::size_t n_labels = 0;
  std::vector<std::size_t> counts;

  Confusion(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& golds, std::size_t labels)
      : n_labels(labels), counts(labels * labels, 0) {
    if (predictions.size() != golds.size()) throw std::invalid_argument("predictions and golds differ in length");
    if (predictions.empty()) throw std::invalid_argument("cannot score an empty prediction set");
    for (std::size_t i = 0; i < golds.size(); ++i) {
      if (golds[i] >= labels || predictions[i] >= labels) throw std::invalid_argument("label index out of range");
      ++counts[golds[i] * labels + predictions[i]];
    }
  }

  std::size_t at(std::size_t gold, std::size_t pred) const { return counts[gold * n_labels + pred]; }

  std::size_t total() const {
    std::size_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }

  std::size_t correct() const {
    std::size_t c = 0;
    for (std::size_t k = 0; k < n_labels; ++k) c += at(k, k);
    return c;
  }

  struct PerLabel {
    double precision = 0, recall = 0, f1 = 0;
    std::size_t support = 0;
  };

  PerLabel label(std::size_t k) const {
    std::size_t predicted = 0, actual = 0;
    for (std::size_t j = 0; j < n_labels; ++j) {
      predicted += at(j, k);
      actual += at(k, j);
    }
    const double tp = static_cast<double>(at(k, k));
    PerLabel r;
    r.support = actual;
    r.precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    r.recall = actual ? tp / static_cast<double>(actual) : 0.0;
    r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
  }

  // Pooled TP / FP / FN over all labels.
  double micro_f1() const {
    const double tp = static_cast<double>(correct());
    const double fp = static_cast<double>(total()) - tp;  // every wrong prediction is one FP and one FN
    const double fn = fp;
    return tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
  }

  // Unweighted mean over all labels of the scheme; absent labels count as 0.
  double macro_f1() const {
    double s = 0;
    for (std::size_t k = 0; k < n_labels; ++k) s += label(k).f1;
    return s / static_cast<double>(n_labels);
  }
};

inline double micro_f1(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& golds,
                       std::size_t n_labels) {
  return Confusion(predictions, golds, n_labels).micro_f1();
}

inline double macro_f1(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& golds,
                       std::size_t n_labels) {
  return Confusion(predictions, golds, n_labels).macro_f1();
}

}  // namespace factprobe
