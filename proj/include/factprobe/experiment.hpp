#pragma once

// Experiment configuration and the prepare / train / evaluate / ablate / synth
// commands. Everything is written below one output directory:
//
//   prepared/<dataset>/{train,val,test}.jsonl, scheme.json, manifest.json
//   checkpoints/<dataset>/<family>-<regime>.json
//   grid.csv, metrics.csv, metrics.md, ablation.csv

#include <atomic>
#include <exception>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "corpus.hpp"
#include "eval.hpp"
#include "probes.hpp"

namespace factprobe {

struct DatasetConfig {
  std::string name;
  std::string path;
  std::string scheme;  // built-in name or scheme file
};

struct ExperimentConfig {
  std::vector<DatasetConfig> datasets;
  std::vector<Family> families = {Family::Forest, Family::Recurrent, Family::Contextual};
  std::vector<InputRegime> regimes = {InputRegime::ClaimOnly, InputRegime::EvidenceOnly,
                                      InputRegime::ClaimPlusEvidence};
  std::uint64_t seed = 0;
  std::string out = "runs";
  std::size_t jobs = 1;  // concurrent grid cells
  SplitRatios ratios;

  struct {
    bool search = true;  // false trains only the preset
    std::vector<std::size_t> n_trees = {ForestConfig::kTreeGrid.begin(), ForestConfig::kTreeGrid.end()};
    std::vector<std::size_t> min_samples_leaf = {ForestConfig::kLeafGrid.begin(), ForestConfig::kLeafGrid.end()};
    std::vector<std::size_t> min_samples_split = {ForestConfig::kSplitGrid.begin(), ForestConfig::kSplitGrid.end()};
    std::size_t features_per_split = 0;
    bool bootstrap = true;
    std::size_t tree_jobs = 1;
  } forest;

  struct {
    bool search = true;
    nn::TrainConfig base = nn::TrainConfig::recurrent_defaults();
    std::vector<double> learning_rate = {nn::TrainConfig::kRecurrentLearningRates.begin(),
                                         nn::TrainConfig::kRecurrentLearningRates.end()};
    std::vector<std::size_t> batch_size = {nn::TrainConfig::kRecurrentBatchSizes.begin(),
                                           nn::TrainConfig::kRecurrentBatchSizes.end()};
    std::vector<std::size_t> lstm_layers = {nn::TrainConfig::kRecurrentLayers.begin(),
                                            nn::TrainConfig::kRecurrentLayers.end()};
    std::vector<double> dropout = {nn::TrainConfig::kRecurrentDropouts.begin(),
                                   nn::TrainConfig::kRecurrentDropouts.end()};
    std::optional<std::string> embeddings;
    OovPolicy oov = OovPolicy::Random;
  } recurrent;

  struct {
    bool search = true;
    nn::TrainConfig base = nn::TrainConfig::contextual_defaults();
    std::vector<double> learning_rate = {nn::TrainConfig::kContextualLearningRates.begin(),
                                         nn::TrainConfig::kContextualLearningRates.end()};
    std::vector<std::size_t> batch_size = {8};
  } contextual;

  const DatasetConfig& dataset(const std::string& name) const {
    for (const auto& d : datasets)
      if (d.name == name) return d;
    throw UsageError("unknown dataset " + name);
  }
};

// --------------------------------------------------------------------------
// Config parsing.

namespace detail {

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream in(trim(text));
  T v{};
  if constexpr (std::is_same_v<T, bool>) {
    const auto t = trim(text);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    throw UsageError("key " + key + ": expected a boolean, got '" + t + "'");
  } else {
    if constexpr (std::is_unsigned_v<T>) {
      if (trim(text).starts_with("-")) throw UsageError("key " + key + ": expected a non-negative value");
    }
    in >> v;
    if (!in || !in.eof()) {
      in.clear();
      std::string rest;
      in >> rest;
      if (!rest.empty() || in.fail()) throw UsageError("key " + key + ": cannot parse '" + trim(text) + "'");
    }
  }
  return v;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& part : split(text, ',')) out.push_back(parse_value<T>(key, part));
  if (out.empty()) throw UsageError("key " + key + ": empty list");
  return out;
}

inline std::string resolve_path(const std::string& base_dir, const std::string& p) {
  if (p.empty() || std::filesystem::path(p).is_absolute() || base_dir.empty()) return p;
  return (std::filesystem::path(base_dir) / p).lexically_normal().string();
}

}  // namespace detail

inline std::vector<Family> parse_families(const std::string& text) {
  std::vector<Family> out;
  for (const auto& part : split(text, ',')) {
    try {
      out.push_back(parse_family(trim(part)));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  return out;
}

inline std::vector<InputRegime> parse_regimes(const std::string& text) {
  std::vector<InputRegime> out;
  for (const auto& part : split(text, ',')) {
    try {
      out.push_back(parse_regime(trim(part)));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  return out;
}

// INI document. Relative paths are taken relative to `base_dir`.
inline ExperimentConfig parse_config(std::istream& in, const std::string& base_dir = "") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  using detail::parse_list;
  using detail::parse_value;

  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw UsageError("config: key '" + section + "' outside a section");
    auto unknown = [&](const std::string& key) { return UsageError("config: unknown key [" + section + "] " + key); };

    if (section == "experiment") {
      for (const auto& [key, node] : body) {
        const auto v = node.data();
        if (key == "seed") c.seed = parse_value<std::uint64_t>(key, v);
        else if (key == "out") c.out = detail::resolve_path(base_dir, trim(v));
        else if (key == "families") c.families = parse_families(v);
        else if (key == "regimes") c.regimes = parse_regimes(v);
        else if (key == "jobs") c.jobs = parse_value<std::size_t>(key, v);
        else if (key == "train_ratio") c.ratios.train = parse_value<double>(key, v);
        else if (key == "val_ratio") c.ratios.val = parse_value<double>(key, v);
        else if (key == "test_ratio") c.ratios.test = parse_value<double>(key, v);
        else throw unknown(key);
      }
    } else if (section.starts_with("dataset:")) {
      DatasetConfig d;
      d.name = trim(section.substr(8));
      if (d.name.empty() || d.name.find_first_of("/\\ ") != std::string::npos)
        throw UsageError("config: bad dataset name '" + d.name + "'");
      for (const auto& [key, node] : body) {
        if (key == "path") d.path = detail::resolve_path(base_dir, trim(node.data()));
        else if (key == "scheme") d.scheme = trim(node.data());
        else throw unknown(key);
      }
      if (d.path.empty() || d.scheme.empty()) throw UsageError("config: [" + section + "] needs path and scheme");
      if (d.scheme != "snopes" && d.scheme != "politifact") d.scheme = detail::resolve_path(base_dir, d.scheme);
      for (const auto& other : c.datasets)
        if (other.name == d.name) throw UsageError("config: dataset " + d.name + " defined twice");
      c.datasets.push_back(d);
    } else if (section == "forest") {
      auto& f = c.forest;
      for (const auto& [key, node] : body) {
        const auto v = node.data();
        if (key == "search") f.search = parse_value<bool>(key, v);
        else if (key == "n_trees") f.n_trees = parse_list<std::size_t>(key, v);
        else if (key == "min_samples_leaf") f.min_samples_leaf = parse_list<std::size_t>(key, v);
        else if (key == "min_samples_split") f.min_samples_split = parse_list<std::size_t>(key, v);
        else if (key == "features_per_split") f.features_per_split = parse_value<std::size_t>(key, v);
        else if (key == "bootstrap") f.bootstrap = parse_value<bool>(key, v);
        else if (key == "tree_jobs") f.tree_jobs = parse_value<std::size_t>(key, v);
        else throw unknown(key);
      }
    } else if (section == "recurrent" || section == "contextual") {
      const bool rec = section == "recurrent";
      auto& base = rec ? c.recurrent.base : c.contextual.base;
      for (const auto& [key, node] : body) {
        const auto v = node.data();
        if (key == "search") (rec ? c.recurrent.search : c.contextual.search) = parse_value<bool>(key, v);
        else if (key == "learning_rate") (rec ? c.recurrent.learning_rate : c.contextual.learning_rate) = parse_list<double>(key, v);
        else if (key == "batch_size") (rec ? c.recurrent.batch_size : c.contextual.batch_size) = parse_list<std::size_t>(key, v);
        else if (rec && key == "lstm_layers") c.recurrent.lstm_layers = parse_list<std::size_t>(key, v);
        else if (rec && key == "dropout") c.recurrent.dropout = parse_list<double>(key, v);
        else if (rec && key == "hidden_dim") base.hidden_dim = parse_value<std::size_t>(key, v);
        else if (rec && key == "embedding_dim") base.embedding_dim = parse_value<std::size_t>(key, v);
        else if (rec && key == "freeze_embeddings") base.freeze_embeddings = parse_value<bool>(key, v);
        else if (rec && key == "embeddings") c.recurrent.embeddings = detail::resolve_path(base_dir, trim(v));
        else if (rec && key == "oov") {
          const auto t = trim(v);
          if (t == "random") c.recurrent.oov = OovPolicy::Random;
          else if (t == "zeros") c.recurrent.oov = OovPolicy::Zeros;
          else throw UsageError("config: oov must be random or zeros");
        }
        else if (!rec && key == "dropout") base.dropout = parse_value<double>(key, v);
        else if (!rec && key == "model_dim") base.model_dim = parse_value<std::size_t>(key, v);
        else if (!rec && key == "encoder_layers") base.encoder_layers = parse_value<std::size_t>(key, v);
        else if (!rec && key == "heads") base.heads = parse_value<std::size_t>(key, v);
        else if (!rec && key == "ff_dim") base.ff_dim = parse_value<std::size_t>(key, v);
        else if (!rec && key == "max_positions") base.max_positions = parse_value<std::size_t>(key, v);
        else if (key == "patience") base.patience = parse_value<std::size_t>(key, v);
        else if (key == "max_epochs") base.max_epochs = parse_value<std::size_t>(key, v);
        else if (key == "min_count") base.min_count = parse_value<std::size_t>(key, v);
        else if (key == "max_claim_tokens") base.max_claim_tokens = parse_value<std::size_t>(key, v);
        else if (key == "max_snippet_tokens") base.max_snippet_tokens = parse_value<std::size_t>(key, v);
        else throw unknown(key);
      }
    } else {
      throw UsageError("config: unknown section [" + section + "]");
    }
  }
  if (c.jobs == 0) throw UsageError("config: jobs must be positive");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path);
  return parse_config(in, std::filesystem::path(path).parent_path().string());
}

// --------------------------------------------------------------------------
// Grid cells.

struct GridCell {
  ProbeSettings settings;
  std::string params;  // "key=value" pairs separated by spaces
};

inline std::uint64_t probe_seed(const ExperimentConfig& c, const std::string& dataset, Family f, InputRegime r) {
  return derive_seed(c.seed, fnv1a(dataset + "/" + family_name(f) + "/" + regime_name(r)));
}

inline std::vector<GridCell> grid_cells(const ExperimentConfig& c, Family family, std::uint64_t seed) {
  std::vector<GridCell> cells;
  ProbeSettings base;
  base.forest.features_per_split = c.forest.features_per_split;
  base.forest.bootstrap = c.forest.bootstrap;
  base.forest.n_jobs = c.forest.tree_jobs;
  base.forest.seed = seed;
  base.embeddings_path = c.recurrent.embeddings;
  base.oov_policy = c.recurrent.oov;

  switch (family) {
    case Family::Forest: {
      base.train.seed = seed;
      if (!c.forest.search) {
        auto s = base;
        const auto preset = ForestConfig::best_known();
        s.forest.n_trees = preset.n_trees;
        s.forest.min_samples_leaf = preset.min_samples_leaf;
        s.forest.min_samples_split = preset.min_samples_split;
        cells.push_back({s, ""});
        break;
      }
      for (auto t : c.forest.n_trees)
        for (auto leaf : c.forest.min_samples_leaf)
          for (auto split : c.forest.min_samples_split) {
            auto s = base;
            s.forest.n_trees = t;
            s.forest.min_samples_leaf = leaf;
            s.forest.min_samples_split = split;
            cells.push_back({s, ""});
          }
      break;
    }
    case Family::Recurrent: {
      base.train = c.recurrent.base;
      base.train.seed = seed;
      if (!c.recurrent.search) {
        cells.push_back({base, ""});
        break;
      }
      for (auto lr : c.recurrent.learning_rate)
        for (auto batch : c.recurrent.batch_size)
          for (auto layers : c.recurrent.lstm_layers)
            for (auto dropout : c.recurrent.dropout) {
              auto s = base;
              s.train.learning_rate = lr;
              s.train.batch_size = batch;
              s.train.lstm_layers = layers;
              s.train.dropout = dropout;
              cells.push_back({s, ""});
            }
      break;
    }
    case Family::Contextual: {
      base.train = c.contextual.base;
      base.train.seed = seed;
      if (!c.contextual.search) {
        cells.push_back({base, ""});
        break;
      }
      for (auto lr : c.contextual.learning_rate)
        for (auto batch : c.contextual.batch_size) {
          auto s = base;
          s.train.learning_rate = lr;
          s.train.batch_size = batch;
          cells.push_back({s, ""});
        }
      break;
    }
  }
  for (auto& cell : cells) {
    const auto& s = cell.settings;
    if (family == Family::Forest) {
      cell.params = "n_trees=" + std::to_string(s.forest.n_trees) +
                    " min_samples_leaf=" + std::to_string(s.forest.min_samples_leaf) +
                    " min_samples_split=" + std::to_string(s.forest.min_samples_split);
    } else {
      std::ostringstream lr;
      lr << s.train.learning_rate;
      cell.params = "learning_rate=" + lr.str() + " batch_size=" + std::to_string(s.train.batch_size);
      if (family == Family::Recurrent)
        cell.params += " lstm_layers=" + std::to_string(s.train.lstm_layers) + " dropout=" + fmt_real(s.train.dropout, 2);
    }
  }
  return cells;
}

// --------------------------------------------------------------------------
// Output layout.

namespace paths {

namespace fs = std::filesystem;

inline fs::path prepared(const std::string& out, const std::string& dataset) { return fs::path(out) / "prepared" / dataset; }

inline fs::path checkpoint(const std::string& out, const std::string& dataset, Family f, InputRegime r) {
  return fs::path(out) / "checkpoints" / dataset / (std::string(family_name(f)) + "-" + regime_name(r) + ".json");
}

}  // namespace paths

inline const char* kGridCsvHeader = "dataset,probe,cell,params,val_micro_f1,val_macro_f1,selection,selected\n";

// --------------------------------------------------------------------------
// prepare

struct PreparedDataset {
  std::string name;
  LabelScheme scheme;
  SplitBundle splits;
  nlohmann::ordered_json manifest;

  const std::vector<ClaimRecord>& part(const std::string& which) const {
    return which == "train" ? splits.train : which == "val" ? splits.val : splits.test;
  }
};

inline nlohmann::ordered_json split_summary(const std::vector<ClaimRecord>& records, const LabelScheme& scheme) {
  nlohmann::ordered_json labels = nlohmann::ordered_json::object();
  for (const auto& l : scheme.labels) labels[l] = 0;
  for (const auto& r : records) labels[r.label] = labels[r.label].get<std::size_t>() + 1;
  return {{"count", records.size()}, {"hash", hash_records(records)}, {"labels", labels}};
}

inline std::vector<PreparedDataset> cmd_prepare(const ExperimentConfig& c, std::ostream& log) {
  if (c.datasets.empty()) throw UsageError("config defines no datasets");
  std::vector<PreparedDataset> prepared;
  // Everything is validated before the first artifact is written.
  for (const auto& d : c.datasets) {
    PreparedDataset p;
    p.name = d.name;
    p.scheme = LabelScheme::resolve(d.scheme);
    const auto raw = load_corpus(d.path, p.scheme);
    if (raw.empty()) throw DataError(d.path + ": empty input");
    const auto kept = filter_nonveracity(raw, p.scheme);
    if (kept.empty()) throw DataError(d.path + ": no veracity-labelled records");
    p.splits = stratified_split(kept, c.seed, c.ratios);
    nlohmann::ordered_json m;
    m["dataset"] = d.name;
    m["source"] = d.path;
    m["source_hash"] = hash_string(read_file(d.path));
    m["scheme"] = p.scheme.name;
    m["scheme_hash"] = p.scheme.hash();
    m["seed"] = c.seed;
    m["ratios"] = {c.ratios.train, c.ratios.val, c.ratios.test};
    m["input_records"] = raw.size();
    m["excluded_records"] = raw.size() - kept.size();
    m["total"] = kept.size();
    for (const char* part : {"train", "val", "test"}) m["splits"][part] = split_summary(p.part(part), p.scheme);
    p.manifest = std::move(m);
    log << "prepare " << d.name << ": " << kept.size() << " records (" << raw.size() - kept.size()
        << " excluded), " << p.splits.train.size() << "/" << p.splits.val.size() << "/" << p.splits.test.size() << "\n";
    prepared.push_back(std::move(p));
  }
  for (const auto& p : prepared) {
    const auto dir = paths::prepared(c.out, p.name);
    std::filesystem::create_directories(dir);
    for (const char* part : {"train", "val", "test"}) write_corpus((dir / (std::string(part) + ".jsonl")).string(), p.part(part));
    write_file((dir / "scheme.json").string(), p.scheme.to_json().dump(2) + "\n");
    write_file((dir / "manifest.json").string(), p.manifest.dump(2) + "\n");
  }
  return prepared;
}

// Reads prepared splits back and refuses files that no longer match the
// manifest.
inline PreparedDataset load_prepared(const std::string& out, const std::string& name) {
  const auto dir = paths::prepared(out, name);
  if (!std::filesystem::exists(dir / "manifest.json"))
    throw DataError("dataset " + name + " is not prepared (" + dir.string() + "); run prepare first");
  PreparedDataset p;
  p.name = name;
  try {
    p.manifest = nlohmann::ordered_json::parse(read_file((dir / "manifest.json").string()));
    p.scheme = LabelScheme::from_json(nlohmann::json::parse(read_file((dir / "scheme.json").string())));
    if (p.scheme.hash() != p.manifest.at("scheme_hash").get<std::string>())
      throw DataError("scheme of " + name + " changed since prepare");
    for (const char* part : {"train", "val", "test"}) {
      const auto path = (dir / (std::string(part) + ".jsonl")).string();
      const auto contents = read_file(path);
      if (hash_string(contents) != p.manifest.at("splits").at(part).at("hash").get<std::string>())
        throw DataError(path + " changed since prepare; rerun prepare");
      auto records = parse_corpus(contents, p.scheme);
      (std::string(part) == "train" ? p.splits.train : std::string(part) == "val" ? p.splits.val : p.splits.test) =
          std::move(records);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest for " + name + ": " + e.what());
  }
  return p;
}

// --------------------------------------------------------------------------
// train

struct GridResult {
  std::string dataset, probe, params;
  std::size_t cell = 0;
  double val_micro = 0, val_macro = 0;
  bool selected = false;
  double selection() const { return 0.5 * (val_micro + val_macro); }
};

inline std::string grid_csv_row(const GridResult& g) {
  return g.dataset + "," + g.probe + "," + std::to_string(g.cell) + "," + g.params + "," + fmt_real(g.val_micro) + "," +
         fmt_real(g.val_macro) + "," + fmt_real(g.selection()) + "," + (g.selected ? "1" : "0") + "\n";
}

inline std::string probe_label(const std::string& dataset, Family f, InputRegime r) {
  return dataset + ":" + family_name(f) + "/" + regime_name(r);
}

// Fits every grid cell and keeps the one with the best mean of validation
// micro and macro F1 (earliest cell on ties).
inline Probe train_grid(const PreparedDataset& data, Family family, InputRegime regime, const ExperimentConfig& c,
                        std::vector<GridResult>& rows, std::ostream& log) {
  const auto cells = grid_cells(c, family, probe_seed(c, data.name, family, regime));
  std::vector<std::optional<Probe>> probes(cells.size());
  std::vector<GridResult> results(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());

  auto run = [&](std::size_t i) {
    try {
      auto probe = fit_probe(family, regime, data.scheme, data.splits, cells[i].settings);
      const auto rep = evaluate(probe, data.splits.val, data.scheme, EvalMode::Within);
      results[i] = {data.name, probe_label(data.name, family, regime), cells[i].params, i, rep.micro_f1, rep.macro_f1, false};
      probes[i] = std::move(probe);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t jobs = std::min(c.jobs, cells.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      run(i);
      if (errors[i]) std::rethrow_exception(errors[i]);
    }
  } else {
    std::atomic<std::size_t> next{0};
    {
      std::vector<std::jthread> workers;
      for (std::size_t j = 0; j < jobs; ++j)
        workers.emplace_back([&] {
          for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) run(i);
        });
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < cells.size(); ++i)
    if (results[i].selection() > results[best].selection()) best = i;
  results[best].selected = true;
  for (const auto& r : results) {
    log << "  " << r.probe << " [" << r.params << "] val micro " << fmt_real(r.val_micro, 4) << " macro "
        << fmt_real(r.val_macro, 4) << (r.selected ? " *" : "") << "\n";
    rows.push_back(r);
  }
  return std::move(*probes[best]);
}

inline std::vector<GridResult> cmd_train(const ExperimentConfig& c, std::ostream& log) {
  if (c.datasets.empty()) throw UsageError("config defines no datasets");
  std::vector<GridResult> rows;
  for (const auto& d : c.datasets) {
    const auto data = load_prepared(c.out, d.name);
    const auto train_hash = data.manifest.at("splits").at("train").at("hash").get<std::string>();
    for (auto family : c.families)
      for (auto regime : c.regimes) {
        log << "train " << probe_label(d.name, family, regime) << "\n";
        const auto probe = train_grid(data, family, regime, c, rows, log);
        if (probe.data_hash != train_hash) throw DataError("training data hash mismatch for " + d.name);
        const auto path = paths::checkpoint(c.out, d.name, family, regime);
        std::filesystem::create_directories(path.parent_path());
        save_probe(probe, path.string());
      }
  }
  std::string csv = kGridCsvHeader;
  for (const auto& r : rows) csv += grid_csv_row(r);
  std::filesystem::create_directories(c.out);
  write_file((std::filesystem::path(c.out) / "grid.csv").string(), csv);
  return rows;
}

// --------------------------------------------------------------------------
// evaluate / ablate

inline Probe load_checked_probe(const ExperimentConfig& c, const PreparedDataset& data, Family f, InputRegime r) {
  const auto path = paths::checkpoint(c.out, data.name, f, r);
  if (!std::filesystem::exists(path))
    throw DataError("missing checkpoint for (" + std::string(family_name(f)) + ", " + regime_name(r) + ") on " +
                    data.name + ": " + path.string());
  auto probe = load_probe(path.string());
  if (probe.family != f || probe.regime != r) throw DataError(path.string() + " holds a different probe");
  if (probe.data_hash != data.manifest.at("splits").at("train").at("hash").get<std::string>())
    throw DataError(path.string() + " was trained on different data than the prepared " + data.name +
                    " split; rerun train");
  if (probe.scheme.hash() != data.scheme.hash()) throw DataError(path.string() + " uses a different label scheme");
  return probe;
}

inline std::string metrics_markdown(const std::vector<MetricReport>& reports) {
  std::string md = "| probe | eval dataset | mode | micro F1 | macro F1 | acc false | acc mixture | acc true |\n"
                   "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : reports)
    md += "| " + r.probe + " | " + r.dataset + " | " + mode_name(r.mode) + " | " + fmt_real(r.micro_f1, 3) + " | " +
          fmt_real(r.macro_f1, 3) + " | " + fmt_real(r.acc_false, 3) + " | " + fmt_real(r.acc_mix, 3) + " | " +
          fmt_real(r.acc_true, 3) + " |\n";
  return md;
}

// Within-dataset test scores for every probe, plus cross-dataset scores on
// every other configured dataset.
inline std::vector<MetricReport> cmd_evaluate(const ExperimentConfig& c, std::ostream& log) {
  if (c.datasets.empty()) throw UsageError("config defines no datasets");
  std::map<std::string, PreparedDataset> data;
  for (const auto& d : c.datasets) data.emplace(d.name, load_prepared(c.out, d.name));
  std::vector<MetricReport> reports;
  for (const auto& d : c.datasets) {
    const auto& own = data.at(d.name);
    for (auto family : c.families)
      for (auto regime : c.regimes) {
        const auto probe = load_checked_probe(c, own, family, regime);
        auto within = evaluate(probe, own.splits.test, own.scheme, EvalMode::Within, d.name);
        within.probe = probe_label(d.name, family, regime);
        reports.push_back(within);
        for (const auto& other : c.datasets) {
          if (other.name == d.name) continue;
          const auto& target = data.at(other.name);
          auto cross = evaluate(probe, target.splits.test, target.scheme, EvalMode::Cross, other.name);
          cross.probe = within.probe;
          reports.push_back(cross);
        }
        log << "evaluate " << within.probe << ": micro " << fmt_real(within.micro_f1, 4) << " macro "
            << fmt_real(within.macro_f1, 4) << "\n";
      }
  }
  std::string csv = kMetricsCsvHeader;
  for (const auto& r : reports) csv += metrics_csv_row(r);
  std::filesystem::create_directories(c.out);
  write_file((std::filesystem::path(c.out) / "metrics.csv").string(), csv);
  write_file((std::filesystem::path(c.out) / "metrics.md").string(), metrics_markdown(reports));
  return reports;
}

inline std::vector<AblationCurve> cmd_ablate(const ExperimentConfig& c, std::ostream& log) {
  if (c.datasets.empty()) throw UsageError("config defines no datasets");
  std::vector<AblationCurve> curves;
  for (const auto& d : c.datasets) {
    const auto data = load_prepared(c.out, d.name);
    for (auto family : c.families)
      for (auto regime : c.regimes) {
        if (regime == InputRegime::ClaimOnly) continue;
        const auto probe = load_checked_probe(c, data, family, regime);
        for (auto curve : ablation_curves(probe, data.splits.test, data.scheme)) {
          curve.probe = probe_label(d.name, family, regime);
          log << "ablate " << curve.probe << " " << direction_name(curve.direction) << ": area "
              << fmt_real(curve.area(), 4) << "\n";
          curves.push_back(std::move(curve));
        }
      }
  }
  std::string csv = kCurveCsvHeader;
  for (const auto& curve : curves) csv += curve_csv_rows(curve);
  std::filesystem::create_directories(c.out);
  write_file((std::filesystem::path(c.out) / "ablation.csv").string(), csv);
  return curves;
}

// --------------------------------------------------------------------------
// synth

inline std::string cmd_synth(const LeakageSpec& spec, std::uint64_t seed, const std::string& out,
                             const std::string& name, std::ostream& log) {
  const auto records = generate_leakage_corpus(spec, seed);
  std::filesystem::create_directories(out);
  const auto path = (std::filesystem::path(out) / (name + ".jsonl")).string();
  write_corpus(path, records);
  log << "synth: " << records.size() << " records -> " << path << "\n";
  return path;
}

}  // namespace factprobe
