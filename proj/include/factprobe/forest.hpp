#pragma once

// Random forest over sparse term-frequency vectors with Gini splits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include <json.hpp>

#include "features.hpp"
#include "prediction.hpp"
#include "util.hpp"

namespace factprobe {

struct ForestConfig {
  std::size_t n_trees = 100;
  std::size_t min_samples_leaf = 1;
  std::size_t min_samples_split = 2;
  std::size_t features_per_split = 0;  // 0 means floor(sqrt(dimension)), at least 1
  bool bootstrap = true;
  std::uint64_t seed = 0;
  std::size_t n_jobs = 1;  // does not affect the fitted model

  static constexpr std::array<std::size_t, 3> kTreeGrid = {100, 500, 1000};
  static constexpr std::array<std::size_t, 4> kLeafGrid = {1, 3, 5, 10};
  static constexpr std::array<std::size_t, 3> kSplitGrid = {2, 5, 10};

  static ForestConfig best_known() {
    ForestConfig c;
    c.n_trees = 1000;
    c.min_samples_leaf = 3;
    c.min_samples_split = 10;
    return c;
  }

  std::size_t resolved_features(std::size_t dimension) const {
    if (features_per_split > 0) return features_per_split;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(dimension))));
  }
};

template <typename T>
double gini_impurity(std::span<const T> counts) {
  double total = 0;
  for (auto c : counts) total += static_cast<double>(c);
  if (!(total > 0)) throw std::invalid_argument("gini_impurity needs a positive total count");
  double sq = 0;
  for (auto c : counts) {
    const double p = static_cast<double>(c) / total;
    sq += p * p;
  }
  return 1.0 - sq;
}

inline double gini_impurity(const std::vector<double>& counts) {
  return gini_impurity(std::span<const double>(counts));
}

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;  // x[feature] <= threshold goes left
  int left = -1;
  int right = -1;
  std::vector<double> counts;  // leaves only

  bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;

  const TreeNode& leaf_for(const SparseVector& x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      i = static_cast<std::size_t>(x.get(static_cast<std::uint32_t>(n.feature)) <= n.threshold ? n.left
                                                                                                : n.right);
    }
    return nodes[i];
  }

  std::size_t depth() const {
    std::vector<std::size_t> d(nodes.size(), 0);
    std::size_t best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      best = std::max(best, d[i]);
      if (!nodes[i].is_leaf()) {
        d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
        d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
      }
    }
    return best;
  }
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  std::size_t n_labels = 0;
  std::size_t dimension = 0;
  ForestConfig config;
  std::optional<double> oob_accuracy;
};

struct Split {
  std::uint32_t feature = 0;
  double threshold = 0;
  double gain = 0;
};

namespace detail {

// Best threshold on one feature for the node holding `samples`. Returns
// nullopt when the feature is constant over the node or no threshold leaves
// `min_leaf` samples on both sides.
inline std::optional<Split> best_threshold(std::span<const SparseVector> X, std::span<const std::size_t> y,
                                           std::span<const std::size_t> samples, std::size_t n_labels,
                                           std::uint32_t feature, std::span<const double> node_counts,
                                           double parent_gini, std::size_t min_leaf,
                                           std::vector<std::pair<double, std::size_t>>& scratch) {
  scratch.clear();
  for (auto s : samples)
    if (const double v = X[s].get(feature); v > 0) scratch.emplace_back(v, y[s]);
  const double n = static_cast<double>(samples.size());
  std::sort(scratch.begin(), scratch.end());

  std::vector<double> left(n_labels, 0.0), right(node_counts.begin(), node_counts.end());
  double n_left = 0;
  // Zero-valued samples form the lowest group.
  const double zeros = n - static_cast<double>(scratch.size());
  if (zeros > 0) {
    for (std::size_t k = 0; k < n_labels; ++k) left[k] = node_counts[k];
    for (const auto& [v, label] : scratch) {
      left[label] -= 1;
    }
    for (std::size_t k = 0; k < n_labels; ++k) right[k] = node_counts[k] - left[k];
    n_left = zeros;
  }

  std::optional<Split> best;
  auto consider = [&](double threshold) {
    const double n_right = n - n_left;
    if (n_left < static_cast<double>(min_leaf) || n_right < static_cast<double>(min_leaf)) return;
    const double gain = parent_gini - (n_left / n) * gini_impurity(std::span<const double>(left)) -
                        (n_right / n) * gini_impurity(std::span<const double>(right));
    if (!best || gain > best->gain) best = Split{feature, threshold, gain};
  };

  double prev = 0;
  bool have_prev = zeros > 0;
  for (std::size_t i = 0; i < scratch.size();) {
    const double v = scratch[i].first;
    if (have_prev) consider(0.5 * (prev + v));
    for (; i < scratch.size() && scratch[i].first == v; ++i) {
      left[scratch[i].second] += 1;
      right[scratch[i].second] -= 1;
      n_left += 1;
    }
    prev = v;
    have_prev = true;
  }
  return best;
}

inline bool better(const Split& a, const std::optional<Split>& b) {
  if (!b) return true;
  if (a.gain != b->gain) return a.gain > b->gain;
  if (a.feature != b->feature) return a.feature < b->feature;
  return a.threshold < b->threshold;
}

}  // namespace detail

// Best split of a node over `features`, ties resolved towards the lowest
// feature index and then the lowest threshold. Only splits with positive
// Gini decrease are returned.
inline std::optional<Split> best_split(std::span<const SparseVector> X, std::span<const std::size_t> y,
                                       std::span<const std::size_t> samples, std::size_t n_labels,
                                       std::span<const std::uint32_t> features, std::size_t min_leaf) {
  std::vector<double> counts(n_labels, 0.0);
  for (auto s : samples) counts[y[s]] += 1;
  const double parent = gini_impurity(std::span<const double>(counts));
  std::vector<std::pair<double, std::size_t>> scratch;
  std::optional<Split> best;
  for (auto f : features) {
    auto s = detail::best_threshold(X, y, samples, n_labels, f, counts, parent, min_leaf, scratch);
    if (s && s->gain > 0 && detail::better(*s, best)) best = s;
  }
  return best;
}

namespace detail {

struct TreeBuilder {
  std::span<const SparseVector> X;
  std::span<const std::size_t> y;
  std::size_t n_labels;
  std::size_t dimension;
  const ForestConfig& config;
  Rng rng;
  std::vector<std::uint32_t> stamp;  // per-feature marker, avoids clearing between nodes
  std::uint32_t epoch = 0;
  std::vector<std::pair<double, std::size_t>> scratch;

  DecisionTree build(std::vector<std::size_t> samples) {
    DecisionTree tree;
    stamp.assign(dimension, 0);
    struct Work {
      std::size_t node;
      std::vector<std::size_t> samples;
    };
    std::vector<Work> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, std::move(samples)});
    const std::size_t mtry = config.resolved_features(dimension);

    while (!stack.empty()) {
      Work w = std::move(stack.back());
      stack.pop_back();
      std::vector<double> counts(n_labels, 0.0);
      for (auto s : w.samples) counts[y[s]] += 1;
      const bool pure = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }) <= 1;

      std::optional<Split> chosen;
      if (!pure && w.samples.size() >= config.min_samples_split &&
          w.samples.size() >= 2 * config.min_samples_leaf) {
        chosen = choose_split(w.samples, counts, mtry);
      }
      if (!chosen) {
        tree.nodes[w.node].counts = std::move(counts);
        continue;
      }
      std::vector<std::size_t> left, right;
      for (auto s : w.samples) (X[s].get(chosen->feature) <= chosen->threshold ? left : right).push_back(s);
      const auto li = tree.nodes.size();
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      auto& node = tree.nodes[w.node];
      node.feature = static_cast<int>(chosen->feature);
      node.threshold = chosen->threshold;
      node.left = static_cast<int>(li);
      node.right = static_cast<int>(li + 1);
      stack.push_back({li + 1, std::move(right)});
      stack.push_back({li, std::move(left)});
    }
    return tree;
  }

  // Samples features uniformly from those not constant over the node; all-zero
  // features are constant by construction, so only present ones are drawn.
  std::optional<Split> choose_split(const std::vector<std::size_t>& samples, const std::vector<double>& counts,
                                    std::size_t mtry) {
    ++epoch;
    std::vector<std::uint32_t> present;
    for (auto s : samples)
      for (const auto& [f, v] : X[s].entries)
        if (stamp[f] != epoch) {
          stamp[f] = epoch;
          present.push_back(f);
        }
    std::sort(present.begin(), present.end());
    shuffle(present, rng);
    const double parent = gini_impurity(std::span<const double>(counts));
    std::optional<Split> best;
    std::size_t evaluated = 0;
    for (auto f : present) {
      if (evaluated >= mtry) break;
      auto s = best_threshold(X, y, samples, n_labels, f, counts, parent, config.min_samples_leaf, scratch);
      if (!s) continue;  // constant over the node, or no admissible threshold
      ++evaluated;
      if (s->gain > 0 && better(*s, best)) best = s;
    }
    return best;
  }
};

}  // namespace detail

inline ForestModel fit_forest(const std::vector<SparseVector>& X, const std::vector<std::size_t>& y,
                              std::size_t n_labels, const ForestConfig& config) {
  if (X.empty() || X.size() != y.size()) throw std::invalid_argument("fit_forest needs |X| = |y| > 0");
  if (config.n_trees == 0) throw std::invalid_argument("fit_forest needs at least one tree");
  for (auto label : y)
    if (label >= n_labels) throw std::invalid_argument("label index out of range");
  std::size_t dimension = 0;
  for (const auto& x : X) dimension = std::max(dimension, x.dimension);

  ForestModel model;
  model.n_labels = n_labels;
  model.dimension = dimension;
  model.config = config;
  model.trees.resize(config.n_trees);
  std::vector<std::vector<std::uint8_t>> in_bag(config.n_trees);

  auto fit_one = [&](std::size_t t) {
    detail::TreeBuilder builder{X, y, n_labels, dimension, config, Rng(derive_seed(config.seed, t)), {}, 0, {}};
    std::vector<std::size_t> samples(X.size());
    if (config.bootstrap) {
      in_bag[t].assign(X.size(), 0);
      for (auto& s : samples) {
        s = uniform_index(builder.rng, X.size());
        in_bag[t][s] = 1;
      }
      std::sort(samples.begin(), samples.end());
    } else {
      std::iota(samples.begin(), samples.end(), 0);
    }
    model.trees[t] = builder.build(std::move(samples));
  };

  const std::size_t jobs = std::clamp<std::size_t>(config.n_jobs, 1, config.n_trees);
  if (jobs == 1) {
    for (std::size_t t = 0; t < config.n_trees; ++t) fit_one(t);
  } else {
    std::vector<std::jthread> workers;
    for (std::size_t j = 0; j < jobs; ++j)
      workers.emplace_back([&, j] {
        for (std::size_t t = j; t < config.n_trees; t += jobs) fit_one(t);
      });
  }

  if (config.bootstrap) {
    std::size_t scored = 0, correct = 0;
    for (std::size_t i = 0; i < X.size(); ++i) {
      std::vector<double> votes(n_labels, 0.0);
      bool any = false;
      for (std::size_t t = 0; t < config.n_trees; ++t) {
        if (in_bag[t][i]) continue;
        const auto& leaf = model.trees[t].leaf_for(X[i]);
        const double total = std::accumulate(leaf.counts.begin(), leaf.counts.end(), 0.0);
        for (std::size_t k = 0; k < n_labels; ++k) votes[k] += leaf.counts[k] / total;
        any = true;
      }
      if (!any) continue;
      ++scored;
      if (static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin()) == y[i]) ++correct;
    }
    if (scored) model.oob_accuracy = static_cast<double>(correct) / static_cast<double>(scored);
  }
  return model;
}

// Mean of the per-tree normalized leaf histograms.
inline PredictionDistribution predict_forest(const ForestModel& model, const SparseVector& x) {
  PredictionDistribution p;
  p.probabilities.assign(model.n_labels, 0.0);
  for (const auto& tree : model.trees) {
    const auto& leaf = tree.leaf_for(x);
    const double total = std::accumulate(leaf.counts.begin(), leaf.counts.end(), 0.0);
    for (std::size_t k = 0; k < model.n_labels; ++k) p.probabilities[k] += leaf.counts[k] / total;
  }
  for (auto& v : p.probabilities) v /= static_cast<double>(model.trees.size());
  return p;
}

inline nlohmann::json forest_to_json(const ForestModel& m) {
  nlohmann::json j;
  j["n_labels"] = m.n_labels;
  j["dimension"] = m.dimension;
  j["config"] = {{"n_trees", m.config.n_trees},
                 {"min_samples_leaf", m.config.min_samples_leaf},
                 {"min_samples_split", m.config.min_samples_split},
                 {"features_per_split", m.config.features_per_split},
                 {"bootstrap", m.config.bootstrap},
                 {"seed", m.config.seed}};
  if (m.oob_accuracy) j["oob_accuracy"] = *m.oob_accuracy;
  auto trees = nlohmann::json::array();
  for (const auto& t : m.trees) {
    nlohmann::json feature = nlohmann::json::array(), threshold = nlohmann::json::array(),
                   left = nlohmann::json::array(), right = nlohmann::json::array(),
                   counts = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      counts.push_back(n.counts);
    }
    trees.push_back({{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right},
                     {"counts", counts}});
  }
  j["trees"] = std::move(trees);
  return j;
}

inline ForestModel forest_from_json(const nlohmann::json& j) {
  ForestModel m;
  m.n_labels = j.at("n_labels").get<std::size_t>();
  m.dimension = j.at("dimension").get<std::size_t>();
  const auto& c = j.at("config");
  m.config.n_trees = c.at("n_trees").get<std::size_t>();
  m.config.min_samples_leaf = c.at("min_samples_leaf").get<std::size_t>();
  m.config.min_samples_split = c.at("min_samples_split").get<std::size_t>();
  m.config.features_per_split = c.at("features_per_split").get<std::size_t>();
  m.config.bootstrap = c.at("bootstrap").get<bool>();
  m.config.seed = c.at("seed").get<std::uint64_t>();
  if (j.contains("oob_accuracy")) m.oob_accuracy = j.at("oob_accuracy").get<double>();
  for (const auto& tj : j.at("trees")) {
    DecisionTree t;
    const auto n = tj.at("feature").size();
    t.nodes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& node = t.nodes[i];
      node.feature = tj.at("feature")[i].get<int>();
      node.threshold = tj.at("threshold")[i].get<double>();
      node.left = tj.at("left")[i].get<int>();
      node.right = tj.at("right")[i].get<int>();
      node.counts = tj.at("counts")[i].get<std::vector<double>>();
    }
    m.trees.push_back(std::move(t));
  }
  return m;
}

}  // namespace factprobe
