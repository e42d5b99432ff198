#pragma once

// Mini-batch training with Adam and early stopping on validation F1.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include <json.hpp>

#include "../metrics.hpp"
#include "optim.hpp"
#include "tensor.hpp"

namespace factprobe::nn {

struct TrainConfig {
  double learning_rate = 5e-4;
  std::size_t batch_size = 16;
  std::size_t lstm_layers = 2;
  double dropout = 0.1;
  std::size_t hidden_dim = 128;
  std::size_t embedding_dim = 300;  // used when no pretrained table is supplied
  bool freeze_embeddings = true;
  // contextual encoder shape
  std::size_t encoder_layers = 2;
  std::size_t heads = 4;
  std::size_t model_dim = 128;
  std::size_t ff_dim = 512;
  std::size_t max_positions = 160;
  // truncation applied before encoding
  std::size_t max_claim_tokens = 64;
  std::size_t max_snippet_tokens = 64;
  std::size_t min_count = 2;

  std::size_t patience = 10;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 0;

  static constexpr std::array<double, 3> kRecurrentLearningRates = {1e-4, 5e-4, 1e-5};
  static constexpr std::array<std::size_t, 2> kRecurrentBatchSizes = {16, 32};
  static constexpr std::array<std::size_t, 2> kRecurrentLayers = {1, 2};
  static constexpr std::array<double, 2> kRecurrentDropouts = {0.0, 0.1};
  static constexpr std::array<double, 3> kContextualLearningRates = {3e-5, 3e-6, 3e-7};

  static TrainConfig recurrent_defaults() { return {}; }

  static TrainConfig contextual_defaults() {
    TrainConfig c;
    c.learning_rate = 3e-6;
    c.batch_size = 8;
    c.freeze_embeddings = false;
    return c;
  }

  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate},   {"batch_size", batch_size},
            {"lstm_layers", lstm_layers},       {"dropout", dropout},
            {"hidden_dim", hidden_dim},         {"embedding_dim", embedding_dim},
            {"freeze_embeddings", freeze_embeddings},
            {"encoder_layers", encoder_layers}, {"heads", heads},
            {"model_dim", model_dim},           {"ff_dim", ff_dim},
            {"max_positions", max_positions},   {"max_claim_tokens", max_claim_tokens},
            {"max_snippet_tokens", max_snippet_tokens}, {"min_count", min_count},
            {"patience", patience},             {"max_epochs", max_epochs},
            {"seed", seed}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.lstm_layers = j.at("lstm_layers").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    c.freeze_embeddings = j.at("freeze_embeddings").get<bool>();
    c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.model_dim = j.at("model_dim").get<std::size_t>();
    c.ff_dim = j.at("ff_dim").get<std::size_t>();
    c.max_positions = j.at("max_positions").get<std::size_t>();
    c.max_claim_tokens = j.at("max_claim_tokens").get<std::size_t>();
    c.max_snippet_tokens = j.at("max_snippet_tokens").get<std::size_t>();
    c.min_count = j.at("min_count").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.max_epochs = j.at("max_epochs").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_micro_f1 = 0;
  double val_macro_f1 = 0;

  double selection_score() const { return 0.5 * (val_micro_f1 + val_macro_f1); }
  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;

  nlohmann::json to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& e : epochs)
      arr.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_micro_f1", e.val_micro_f1},
                     {"val_macro_f1", e.val_macro_f1}});
    return {{"best_epoch", best_epoch}, {"epochs", arr}};
  }

  static TrainHistory from_json(const nlohmann::json& j) {
    TrainHistory h;
    h.best_epoch = j.at("best_epoch").get<std::size_t>();
    for (const auto& e : j.at("epochs"))
      h.epochs.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                          e.at("val_micro_f1").get<double>(), e.at("val_macro_f1").get<double>()});
    return h;
  }
};

// `Net` provides
//   S accumulate(const Example&, std::size_t gold, Rng* dropout_rng)  -- loss, adds gradients
//   std::size_t predict(const Example&) const                          -- argmax label
//   visit(F, prefix), n_labels()
// Keeps the parameters of the epoch with the best mean of validation micro
// and macro F1; stops after `patience` epochs without improvement.
template <typename S, typename Net, typename Example>
TrainHistory train_network(Net& net, const std::vector<Example>& train, const std::vector<std::size_t>& train_gold,
                           const std::vector<Example>& val, const std::vector<std::size_t>& val_gold,
                           const TrainConfig& config) {
  if (train.empty() || val.empty()) throw std::invalid_argument("training needs non-empty train and validation sets");
  if (config.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  Adam<S> optimizer(config.learning_rate);
  Rng order_rng(derive_seed(config.seed, 1));
  Rng dropout_rng(derive_seed(config.seed, 2));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainHistory history;
  std::optional<Net> best;
  double best_score = -1;
  const std::size_t max_epochs = std::max<std::size_t>(config.max_epochs, 1);
  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    shuffle(order, order_rng);
    double loss_sum = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      zero_grad(net);
      S batch_loss = 0;
      for (std::size_t i = start; i < end; ++i) batch_loss += net.accumulate(train[order[i]], train_gold[order[i]], &dropout_rng);
      if (!std::isfinite(static_cast<double>(batch_loss)))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index));
      const S scale = S(1) / static_cast<S>(end - start);
      net.visit([&](const std::string&, Parameter<S>& p) {
        if (p.trainable) p.grad *= scale;
      }, "");
      optimizer.step(net);
      loss_sum += static_cast<double>(batch_loss);
    }

    std::vector<std::size_t> preds(val.size());
    for (std::size_t i = 0; i < val.size(); ++i) preds[i] = net.predict(val[i]);
    const Confusion confusion(preds, val_gold, net.n_labels());
    EpochRecord rec{epoch, loss_sum / static_cast<double>(train.size()), confusion.micro_f1(), confusion.macro_f1()};
    history.epochs.push_back(rec);
    if (rec.selection_score() > best_score) {
      best_score = rec.selection_score();
      history.best_epoch = epoch;
      best = net;
    }
    if (epoch - history.best_epoch >= config.patience) break;
  }
  if (best) net = std::move(*best);
  return history;
}

}  // namespace factprobe::nn
