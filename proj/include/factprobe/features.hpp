#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "util.hpp"

namespace factprobe {

using Tokens = std::vector<std::string>;

// Lowercases ASCII, splits on whitespace and emits every ASCII punctuation
// character as its own token. Bytes >= 0x80 are treated as word characters.
inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur += c < 0x80 ? static_cast<char>(std::tolower(c)) : ch;
    }
  }
  flush();
  return out;
}

inline Tokens truncate(Tokens t, std::size_t max_len) {
  if (t.size() > max_len) t.resize(max_len);
  return t;
}

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  Vocabulary() : Vocabulary(std::vector<std::string>{"<pad>", "<unk>"}, 1) {}

  // `tokens` lists every entry in index order, specials included.
  Vocabulary(std::vector<std::string> tokens, std::size_t min_count)
      : tokens_(std::move(tokens)), min_count_(min_count) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t min_count() const { return min_count_; }
  const std::string& token(std::size_t i) const { return tokens_.at(i); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::optional<std::size_t> find(const std::string& t) const {
    const auto it = index_.find(t);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t index_or_unk(const std::string& t) const { return find(t).value_or(kUnk); }

  std::vector<std::size_t> encode(const Tokens& toks) const {
    std::vector<std::size_t> ids;
    ids.reserve(toks.size());
    for (const auto& t : toks) ids.push_back(index_or_unk(t));
    return ids;
  }

  std::string hash() const {
    std::uint64_t h = fnv1a("vocab");
    for (const auto& t : tokens_) h = fnv1a(t + '\n', h);
    return hex64(h);
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t min_count_ = 1;
};

// Entries ordered by descending frequency, ties lexicographic, after the
// PAD/UNK specials and any `extra_specials`.
inline Vocabulary build_vocab(const std::vector<Tokens>& streams, std::size_t min_count,
                              const std::vector<std::string>& extra_specials = {}) {
  if (min_count == 0) throw UsageError("min_count must be at least 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& s : streams)
    for (const auto& t : s) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [t, c] : counts)
    if (c >= min_count) kept.emplace_back(t, c);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = {"<pad>", "<unk>"};
  tokens.insert(tokens.end(), extra_specials.begin(), extra_specials.end());
  for (auto& [t, c] : kept) tokens.push_back(t);
  return Vocabulary(std::move(tokens), min_count);
}

struct SparseVector {
  std::size_t dimension = 0;
  std::vector<std::pair<std::uint32_t, double>> entries;  // strictly increasing index, value > 0

  double get(std::uint32_t index) const {
    const auto it = std::lower_bound(entries.begin(), entries.end(), index,
                                     [](const auto& e, std::uint32_t i) { return e.first < i; });
    return it != entries.end() && it->first == index ? it->second : 0.0;
  }

  double sum() const {
    double s = 0;
    for (const auto& [i, v] : entries) s += v;
    return s;
  }

  bool operator==(const SparseVector&) const = default;
};

// Raw term counts over in-vocabulary tokens; OOV tokens and specials are
// ignored. Accepts several streams, counted as one concatenation.
inline SparseVector vectorize_tf(const std::vector<const Tokens*>& streams, const Vocabulary& vocab) {
  std::map<std::uint32_t, double> counts;
  for (const auto* s : streams)
    for (const auto& t : *s)
      if (auto i = vocab.find(t); i && *i > Vocabulary::kUnk) counts[static_cast<std::uint32_t>(*i)] += 1.0;
  SparseVector v;
  v.dimension = vocab.size();
  v.entries.assign(counts.begin(), counts.end());
  return v;
}

inline SparseVector vectorize_tf(const Tokens& tokens, const Vocabulary& vocab) {
  return vectorize_tf(std::vector<const Tokens*>{&tokens}, vocab);
}

enum class OovPolicy { Zeros, Random };

// Row i holds the vector of vocabulary entry i. The PAD row is all zero.
struct EmbeddingTable {
  Eigen::MatrixXd weights;  // |V| x d
  std::size_t found = 0;    // vocabulary entries present in the source file

  std::size_t dimension() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t rows() const { return static_cast<std::size_t>(weights.rows()); }
};

inline void fill_oov_row(Eigen::MatrixXd& w, Eigen::Index row, OovPolicy policy, Rng& rng) {
  if (policy == OovPolicy::Zeros) {
    w.row(row).setZero();
  } else {
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(row, c) = (uniform_unit(rng) * 2.0 - 1.0) * 0.25;
  }
}

// Embeddings not read from a file: every non-PAD row follows `policy`.
inline EmbeddingTable random_embeddings(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed,
                                        OovPolicy policy = OovPolicy::Random) {
  EmbeddingTable t;
  t.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(dim));
  Rng rng(seed);
  for (std::size_t i = 1; i < vocab.size(); ++i) fill_oov_row(t.weights, static_cast<Eigen::Index>(i), policy, rng);
  return t;
}

// Text format: one "token v1 ... vd" line per entry. An optional
// word2vec-style "count dim" header line is skipped.
inline EmbeddingTable parse_embeddings(std::istream& in, const Vocabulary& vocab, OovPolicy policy,
                                       std::uint64_t seed = 0) {
  std::vector<std::optional<std::vector<double>>> rows(vocab.size());
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::vector<std::string> fields;
    for (std::string f; ss >> f;) fields.push_back(std::move(f));
    if (fields.empty()) continue;
    if (line_no == 1 && fields.size() == 2 &&
        std::all_of(fields[0].begin(), fields[0].end(), ::isdigit) &&
        std::all_of(fields[1].begin(), fields[1].end(), ::isdigit))
      continue;
    if (fields.size() < 2) throw DataError("embedding line " + std::to_string(line_no) + " has no values");
    const auto d = fields.size() - 1;
    if (dim == 0) dim = d;
    if (d != dim)
      throw DataError("embedding line " + std::to_string(line_no) + " has dimension " + std::to_string(d) +
                      ", expected " + std::to_string(dim));
    const auto idx = vocab.find(fields[0]);
    if (!idx || *idx == Vocabulary::kPad || rows[*idx]) continue;
    std::vector<double> v(d);
    try {
      for (std::size_t k = 0; k < d; ++k) v[k] = std::stod(fields[k + 1]);
    } catch (const std::exception&) {
      throw DataError("embedding line " + std::to_string(line_no) + " has a non-numeric value");
    }
    rows[*idx] = std::move(v);
  }
  if (dim == 0) throw DataError("embedding file is empty");

  EmbeddingTable t;
  t.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(dim));
  Rng rng(seed);
  for (std::size_t i = 1; i < vocab.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    if (rows[i]) {
      for (std::size_t k = 0; k < dim; ++k) t.weights(r, static_cast<Eigen::Index>(k)) = (*rows[i])[k];
      ++t.found;
    } else {
      fill_oov_row(t.weights, r, policy, rng);
    }
  }
  return t;
}

inline EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab,
                                      OovPolicy policy = OovPolicy::Zeros, std::uint64_t seed = 0) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_embeddings(in, vocab, policy, seed);
}

}  // namespace factprobe
