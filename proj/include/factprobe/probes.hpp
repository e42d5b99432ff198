#pragma once

// One trained model per (family, input regime) pair behind a single
// prediction interface. A probe only ever reads the parts of a record its
// regime allows.

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "features.hpp"
#include "forest.hpp"
#include "neural/models.hpp"
#include "neural/train.hpp"
#include "prediction.hpp"

namespace factprobe {

inline constexpr int kCheckpointVersion = 1;

struct ProbeSettings {
  ForestConfig forest;
  nn::TrainConfig train;
  std::optional<std::string> embeddings_path;  // recurrent family only
  OovPolicy oov_policy = OovPolicy::Random;
};

class Probe {
 public:
  using Model = std::variant<ForestModel, nn::RecurrentNet<double>, nn::ContextualNet<double>>;

  Family family = Family::Forest;
  InputRegime regime = InputRegime::ClaimPlusEvidence;
  LabelScheme scheme;
  Vocabulary vocab;
  Model model;
  ForestConfig forest_config;
  nn::TrainConfig train_config;
  nn::TrainHistory history;
  std::string data_hash;  // content hash of the training data

  std::string id() const { return std::string(family_name(family)) + "/" + regime_name(regime); }
  std::size_t n_labels() const { return scheme.size(); }

  PredictionDistribution predict(const ClaimRecord& record) const;

  nlohmann::json to_json() const;
  static Probe from_json(const nlohmann::json& j);
};

// --------------------------------------------------------------------------
// Featurization.

struct RecordTokens {
  Tokens claim;
  std::vector<std::optional<Tokens>> snippets;  // nullopt for padded slots
};

inline RecordTokens tokenize_record(const ClaimRecord& r) {
  RecordTokens t;
  t.claim = tokenize(r.claim_text);
  for (const auto& s : r.snippets) t.snippets.push_back(s.padded ? std::nullopt : std::optional(tokenize(s.text)));
  return t;
}

// Token streams the regime may see, claim first.
inline std::vector<const Tokens*> regime_streams(const RecordTokens& t, InputRegime regime) {
  std::vector<const Tokens*> streams;
  if (uses_claim(regime)) streams.push_back(&t.claim);
  if (uses_evidence(regime))
    for (const auto& s : t.snippets)
      if (s) streams.push_back(&*s);
  return streams;
}

inline SparseVector featurize_tf(const ClaimRecord& r, InputRegime regime, const Vocabulary& vocab) {
  const auto t = tokenize_record(r);
  return vectorize_tf(regime_streams(t, regime), vocab);
}

inline nn::SequenceExample featurize_sequence(const ClaimRecord& r, InputRegime regime, const Vocabulary& vocab,
                                              const nn::TrainConfig& cfg) {
  nn::SequenceExample ex;
  if (uses_claim(regime)) ex.claim = vocab.encode(truncate(tokenize(r.claim_text), cfg.max_claim_tokens));
  if (uses_evidence(regime)) {
    for (const auto& s : r.snippets) {
      if (s.padded) {
        ex.snippets.emplace_back();
        continue;
      }
      auto ids = vocab.encode(truncate(tokenize(s.text), cfg.max_snippet_tokens));
      if (ids.empty()) ex.snippets.emplace_back();
      else ex.snippets.emplace_back(std::move(ids));
    }
  }
  return ex;
}

inline Vocabulary fit_vocabulary(const std::vector<ClaimRecord>& records, InputRegime regime, std::size_t min_count,
                                 const std::vector<std::string>& extra_specials = {}) {
  std::vector<Tokens> streams;
  for (const auto& r : records) {
    const auto t = tokenize_record(r);
    for (const auto* s : regime_streams(t, regime)) streams.push_back(*s);
  }
  return build_vocab(streams, min_count, extra_specials);
}

inline std::string hash_records(const std::vector<ClaimRecord>& records) {
  return hash_string(serialize_corpus(records));
}

// --------------------------------------------------------------------------
// Prediction.

inline PredictionDistribution distribution_from_logits(const nn::Vec<double>& logits, bool zero_evidence) {
  const nn::Vec<double> p = nn::softmax<double>(logits);
  PredictionDistribution d;
  d.probabilities.assign(p.data(), p.data() + p.size());
  d.zero_evidence = zero_evidence;
  return d;
}

inline PredictionDistribution predict_tf_forest(const Probe& probe, const ClaimRecord& record) {
  const auto* forest = std::get_if<ForestModel>(&probe.model);
  if (!forest) throw std::invalid_argument("predict_tf_forest called on a " + std::string(family_name(probe.family)) + " probe");
  auto d = predict_forest(*forest, featurize_tf(record, probe.regime, probe.vocab));
  if (probe.regime == InputRegime::EvidenceOnly) d.zero_evidence = record.real_snippet_count() == 0;
  return d;
}

inline PredictionDistribution predict_recurrent(const Probe& probe, const ClaimRecord& record) {
  const auto* net = std::get_if<nn::RecurrentNet<double>>(&probe.model);
  if (!net) throw std::invalid_argument("predict_recurrent called on a " + std::string(family_name(probe.family)) + " probe");
  typename nn::RecurrentNet<double>::Forward f;
  const auto logits = net->forward(featurize_sequence(record, probe.regime, probe.vocab, probe.train_config), f);
  return distribution_from_logits(logits, f.zero_evidence);
}

inline PredictionDistribution predict_contextual(const Probe& probe, const ClaimRecord& record) {
  const auto* net = std::get_if<nn::ContextualNet<double>>(&probe.model);
  if (!net) throw std::invalid_argument("predict_contextual called on a " + std::string(family_name(probe.family)) + " probe");
  typename nn::ContextualNet<double>::Forward f;
  const auto logits = net->forward(featurize_sequence(record, probe.regime, probe.vocab, probe.train_config), f);
  return distribution_from_logits(logits, f.zero_evidence);
}

inline PredictionDistribution Probe::predict(const ClaimRecord& record) const {
  switch (family) {
    case Family::Forest: return predict_tf_forest(*this, record);
    case Family::Recurrent: return predict_recurrent(*this, record);
    case Family::Contextual: return predict_contextual(*this, record);
  }
  throw std::logic_error("unknown family");
}

// --------------------------------------------------------------------------
// Construction and training.

inline const std::vector<std::string>& contextual_specials() {
  static const std::vector<std::string> s = {"[cls]", "[sep]"};
  return s;
}

inline nn::RecurrentNet<double>::Shape recurrent_shape(const Probe& p, std::size_t embedding_dim) {
  nn::RecurrentNet<double>::Shape shape;
  shape.vocab = p.vocab.size();
  shape.embedding_dim = embedding_dim;
  shape.hidden = p.train_config.hidden_dim;
  shape.layers = p.train_config.lstm_layers;
  shape.labels = p.scheme.size();
  shape.regime = p.regime;
  shape.dropout = p.train_config.dropout;
  shape.freeze_embeddings = p.train_config.freeze_embeddings;
  return shape;
}

inline nn::ContextualNet<double>::Shape contextual_shape(const Probe& p) {
  nn::ContextualNet<double>::Shape shape;
  shape.vocab = p.vocab.size();
  shape.model_dim = p.train_config.model_dim;
  shape.layers = p.train_config.encoder_layers;
  shape.heads = p.train_config.heads;
  shape.ff_dim = p.train_config.ff_dim;
  shape.max_positions = p.train_config.max_positions;
  shape.labels = p.scheme.size();
  shape.cls_id = *p.vocab.find(contextual_specials()[0]);
  shape.sep_id = *p.vocab.find(contextual_specials()[1]);
  shape.regime = p.regime;
  shape.dropout = p.train_config.dropout;
  return shape;
}

// Untrained probe with freshly initialized parameters; the vocabulary is fit
// on `records`.
inline Probe make_probe(Family family, InputRegime regime, const LabelScheme& scheme,
                        const std::vector<ClaimRecord>& records, const ProbeSettings& settings) {
  Probe p;
  p.family = family;
  p.regime = regime;
  p.scheme = scheme;
  p.forest_config = settings.forest;
  p.train_config = settings.train;
  switch (family) {
    case Family::Forest:
      p.vocab = fit_vocabulary(records, regime, 1);
      break;
    case Family::Recurrent: {
      p.vocab = fit_vocabulary(records, regime, settings.train.min_count);
      if (settings.embeddings_path) {
        const auto table = load_embeddings(*settings.embeddings_path, p.vocab, settings.oov_policy, settings.train.seed);
        p.train_config.embedding_dim = table.dimension();
        p.model = nn::RecurrentNet<double>(recurrent_shape(p, table.dimension()), settings.train.seed, &table.weights);
      } else {
        p.train_config.freeze_embeddings = false;  // a random table is only useful when trained
        p.model = nn::RecurrentNet<double>(recurrent_shape(p, settings.train.embedding_dim), settings.train.seed);
      }
      break;
    }
    case Family::Contextual:
      p.vocab = fit_vocabulary(records, regime, settings.train.min_count, contextual_specials());
      p.model = nn::ContextualNet<double>(contextual_shape(p), settings.train.seed);
      break;
  }
  return p;
}

inline std::vector<std::size_t> label_indices(const std::vector<ClaimRecord>& records, const LabelScheme& scheme) {
  std::vector<std::size_t> y;
  y.reserve(records.size());
  for (const auto& r : records) y.push_back(scheme.index_of(r.label));
  return y;
}

// Fits a probe on splits.train; neural families early-stop on splits.val.
inline Probe fit_probe(Family family, InputRegime regime, const LabelScheme& scheme, const SplitBundle& splits,
                       const ProbeSettings& settings) {
  if (splits.train.empty()) throw DataError("cannot train on an empty split");
  Probe p = make_probe(family, regime, scheme, splits.train, settings);
  p.data_hash = hash_records(splits.train);
  const auto y_train = label_indices(splits.train, scheme);

  auto fit_network = [&](auto& net) {
    if (splits.val.empty()) throw DataError("neural probes need a non-empty validation split");
    std::vector<nn::SequenceExample> train, val;
    for (const auto& r : splits.train) train.push_back(featurize_sequence(r, regime, p.vocab, p.train_config));
    for (const auto& r : splits.val) val.push_back(featurize_sequence(r, regime, p.vocab, p.train_config));
    p.history = nn::train_network<double>(net, train, y_train, val, label_indices(splits.val, scheme), p.train_config);
  };

  switch (family) {
    case Family::Forest: {
      std::vector<SparseVector> X;
      X.reserve(splits.train.size());
      for (const auto& r : splits.train) X.push_back(featurize_tf(r, regime, p.vocab));
      p.model = fit_forest(X, y_train, scheme.size(), p.forest_config);
      break;
    }
    case Family::Recurrent: fit_network(std::get<nn::RecurrentNet<double>>(p.model)); break;
    case Family::Contextual: fit_network(std::get<nn::ContextualNet<double>>(p.model)); break;
  }
  return p;
}

// --------------------------------------------------------------------------
// Checkpoints.

inline nlohmann::json Probe::to_json() const {
  nlohmann::json j;
  j["format"] = "factprobe-probe";
  j["version"] = kCheckpointVersion;
  j["family"] = family_name(family);
  j["regime"] = regime_name(regime);
  j["scheme"] = nlohmann::json::parse(scheme.to_json().dump());
  j["scheme_hash"] = scheme.hash();
  j["vocabulary"] = vocab.tokens();
  j["vocabulary_min_count"] = vocab.min_count();
  j["vocabulary_hash"] = vocab.hash();
  j["data_hash"] = data_hash;
  j["history"] = history.to_json();
  if (const auto* f = std::get_if<ForestModel>(&model)) {
    j["forest"] = forest_to_json(*f);
  } else if (const auto* r = std::get_if<nn::RecurrentNet<double>>(&model)) {
    j["train_config"] = train_config.to_json();
    j["embedding_dim"] = r->embedding.dim();
    j["parameters"] = nn::parameters_to_json(const_cast<nn::RecurrentNet<double>&>(*r));
  } else if (const auto* c = std::get_if<nn::ContextualNet<double>>(&model)) {
    j["train_config"] = train_config.to_json();
    j["parameters"] = nn::parameters_to_json(const_cast<nn::ContextualNet<double>&>(*c));
  }
  return j;
}

inline Probe Probe::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "factprobe-probe") throw DataError("not a probe checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw DataError("unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
    Probe p;
    p.family = parse_family(j.at("family").get<std::string>());
    p.regime = parse_regime(j.at("regime").get<std::string>());
    p.scheme = LabelScheme::from_json(j.at("scheme"));
    if (p.scheme.hash() != j.at("scheme_hash").get<std::string>()) throw DataError("checkpoint scheme hash mismatch");
    p.vocab = Vocabulary(j.at("vocabulary").get<std::vector<std::string>>(), j.at("vocabulary_min_count").get<std::size_t>());
    if (p.vocab.hash() != j.at("vocabulary_hash").get<std::string>()) throw DataError("checkpoint vocabulary hash mismatch");
    p.data_hash = j.at("data_hash").get<std::string>();
    p.history = nn::TrainHistory::from_json(j.at("history"));
    switch (p.family) {
      case Family::Forest: {
        p.model = forest_from_json(j.at("forest"));
        p.forest_config = std::get<ForestModel>(p.model).config;
        break;
      }
      case Family::Recurrent: {
        p.train_config = nn::TrainConfig::from_json(j.at("train_config"));
        nn::RecurrentNet<double> net(recurrent_shape(p, j.at("embedding_dim").get<std::size_t>()), 0);
        nn::parameters_from_json(net, j.at("parameters"));
        p.model = std::move(net);
        break;
      }
      case Family::Contextual: {
        p.train_config = nn::TrainConfig::from_json(j.at("train_config"));
        nn::ContextualNet<double> net(contextual_shape(p), 0);
        nn::parameters_from_json(net, j.at("parameters"));
        p.model = std::move(net);
        break;
      }
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed probe checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("malformed probe checkpoint: ") + e.what());
  }
}

inline void save_probe(const Probe& p, const std::string& path) { write_file(path, p.to_json().dump()); }

inline Probe load_probe(const std::string& path) {
  try {
    return Probe::from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("cannot parse checkpoint " + path + ": " + e.what());
  }
}

}  // namespace factprobe
