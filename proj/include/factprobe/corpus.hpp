#pragma once

// Claim/evidence datasets: records, label schemes, loading, filtering,
// stratified splitting and a synthetic leakage generator.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "util.hpp"

namespace factprobe {

inline constexpr std::size_t kSnippetSlots = 10;

enum class Group { False, Mix, True };

inline const char* group_name(Group g) {
  switch (g) {
    case Group::False: return "false";
    case Group::Mix: return "mix";
    case Group::True: return "true";
  }
  return "?";
}

struct EvidenceSnippet {
  int rank = 0;
  std::string text;
  std::optional<std::string> title;
  std::string source_domain;
  bool padded = false;

  bool operator==(const EvidenceSnippet&) const = default;
};

struct ClaimRecord {
  std::string id;
  std::string claim_text;
  std::string origin_domain;
  // Always kSnippetSlots entries after loading: real snippets in ascending
  // rank order, followed by padded slots.
  std::vector<EvidenceSnippet> snippets;
  std::string label;

  bool operator==(const ClaimRecord&) const = default;

  std::size_t real_snippet_count() const {
    return static_cast<std::size_t>(std::count_if(
        snippets.begin(), snippets.end(), [](const auto& s) { return !s.padded; }));
  }
};

// Shared label set used for out-of-dataset scoring.
inline const std::vector<std::string>& canonical_labels() {
  static const std::vector<std::string> labels = {"false", "mostly false", "mixture",
                                                  "mostly true", "true"};
  return labels;
}

struct LabelScheme {
  std::string name;
  std::vector<std::string> labels;
  std::vector<std::string> excluded;
  std::map<std::string, std::string> merge_map;
  std::map<std::string, Group> group_map;

  std::size_t size() const { return labels.size(); }

  std::optional<std::size_t> find(const std::string& label) const {
    const auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) return std::nullopt;
    return static_cast<std::size_t>(it - labels.begin());
  }

  std::size_t index_of(const std::string& label) const {
    if (auto i = find(label)) return *i;
    throw DataError("label '" + label + "' is not part of scheme '" + name + "'");
  }

  bool is_excluded(const std::string& label) const {
    return std::find(excluded.begin(), excluded.end(), label) != excluded.end();
  }

  bool knows(const std::string& label) const { return find(label) || is_excluded(label); }

  // Throws DataError when an invariant is broken.
  void validate() const {
    if (labels.empty()) throw DataError("scheme '" + name + "' has no labels");
    std::set<std::string> seen;
    for (const auto& l : labels) {
      if (!seen.insert(l).second) throw DataError("duplicate label '" + l + "' in scheme " + name);
      if (!group_map.count(l)) throw DataError("group_map of scheme " + name + " misses '" + l + "'");
    }
    const auto& canon = canonical_labels();
    for (const auto& [from, to] : merge_map) {
      if (std::find(canon.begin(), canon.end(), to) == canon.end())
        throw DataError("merge_map of scheme " + name + " maps '" + from +
                        "' outside the canonical label set");
    }
  }

  static LabelScheme politifact() {
    LabelScheme s;
    s.name = "politifact";
    s.labels = {"pants on fire!", "false", "mostly false", "half-true", "mostly true", "true"};
    s.excluded = {"full flop", "half flip", "no flip"};
    s.merge_map = {{"pants on fire!", "false"},       {"false", "false"},
                   {"mostly false", "mostly false"},  {"half-true", "mixture"},
                   {"mostly true", "mostly true"},    {"true", "true"}};
    s.group_map = {{"pants on fire!", Group::False}, {"false", Group::False},
                   {"mostly false", Group::False},   {"half-true", Group::Mix},
                   {"mostly true", Group::True},     {"true", Group::True}};
    return s;
  }

  static LabelScheme snopes() {
    LabelScheme s;
    s.name = "snopes";
    s.labels = {"false", "mostly false", "mixture", "mostly true", "true"};
    s.excluded = {"unproven",      "miscaptioned", "legend",
                  "outdated",      "misattributed", "scam",
                  "correct attribution"};
    for (const auto& l : s.labels) s.merge_map[l] = l;
    s.group_map = {{"false", Group::False},
                   {"mostly false", Group::False},
                   {"mixture", Group::Mix},
                   {"mostly true", Group::True},
                   {"true", Group::True}};
    return s;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["labels"] = labels;
    j["excluded"] = excluded;
    j["merge_map"] = merge_map;
    nlohmann::ordered_json groups = nlohmann::ordered_json::object();
    for (const auto& l : labels) groups[l] = group_name(group_map.at(l));
    j["group_map"] = groups;
    return j;
  }

  template <typename Json>
  static LabelScheme from_json(const Json& j) {
    LabelScheme s;
    try {
      s.name = j.value("name", std::string("custom"));
      s.labels = j.at("labels").template get<std::vector<std::string>>();
      if (j.contains("excluded")) s.excluded = j.at("excluded").template get<std::vector<std::string>>();
      if (j.contains("merge_map"))
        s.merge_map = j.at("merge_map").template get<std::map<std::string, std::string>>();
      for (const auto& [label, g] : j.at("group_map").items()) {
        const auto gs = g.template get<std::string>();
        if (gs == "false") s.group_map[label] = Group::False;
        else if (gs == "mix") s.group_map[label] = Group::Mix;
        else if (gs == "true") s.group_map[label] = Group::True;
        else throw DataError("unknown group '" + gs + "' for label '" + label + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed label scheme: ") + e.what());
    }
    s.validate();
    return s;
  }

  // Built-in name ("politifact", "snopes") or path to a scheme file.
  static LabelScheme resolve(const std::string& name_or_path) {
    if (name_or_path == "politifact") return politifact();
    if (name_or_path == "snopes") return snopes();
    try {
      return from_json(nlohmann::json::parse(read_file(name_or_path)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("cannot parse scheme file " + name_or_path + ": " + e.what());
    }
  }

  std::string hash() const { return hash_string(to_json().dump()); }
};

inline std::string merge_for_cross_eval(const std::string& label, const LabelScheme& scheme) {
  scheme.index_of(label);
  const auto it = scheme.merge_map.find(label);
  return it == scheme.merge_map.end() ? label : it->second;
}

inline Group group_three_class(const std::string& label, const LabelScheme& scheme) {
  scheme.index_of(label);
  return scheme.group_map.at(label);
}

// ---------------------------------------------------------------------------
// Record validation and serialization.

// Drops snippets from the claim's own site, sorts by rank and pads to
// kSnippetSlots. Pads take the unused ranks in ascending order.
inline void normalize_snippets(ClaimRecord& r) {
  std::erase_if(r.snippets, [&](const EvidenceSnippet& s) {
    return s.padded || s.source_domain == r.origin_domain;
  });
  std::stable_sort(r.snippets.begin(), r.snippets.end(),
                   [](const auto& a, const auto& b) { return a.rank < b.rank; });
  std::array<bool, kSnippetSlots + 1> used{};
  for (const auto& s : r.snippets) used[static_cast<std::size_t>(s.rank)] = true;
  int next = 1;
  while (r.snippets.size() < kSnippetSlots) {
    while (used[static_cast<std::size_t>(next)]) ++next;
    EvidenceSnippet pad;
    pad.rank = next++;
    pad.padded = true;
    r.snippets.push_back(std::move(pad));
  }
}

inline void validate_record(const ClaimRecord& r) {
  if (r.id.empty()) throw DataError("record without id");
  if (r.claim_text.empty()) throw DataError("record " + r.id + " has an empty claim");
  if (r.snippets.size() > kSnippetSlots)
    throw DataError("record " + r.id + " has more than 10 snippets");
  std::set<int> ranks;
  for (const auto& s : r.snippets) {
    if (s.rank < 1 || s.rank > static_cast<int>(kSnippetSlots))
      throw DataError("record " + r.id + " has snippet rank " + std::to_string(s.rank));
    if (!ranks.insert(s.rank).second)
      throw DataError("record " + r.id + " repeats snippet rank " + std::to_string(s.rank));
    if (!s.padded && s.text.empty())
      throw DataError("record " + r.id + " has an empty snippet at rank " + std::to_string(s.rank));
  }
}

inline nlohmann::ordered_json record_to_json(const ClaimRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["claim"] = r.claim_text;
  j["label"] = r.label;
  j["origin_domain"] = r.origin_domain;
  auto snippets = nlohmann::ordered_json::array();
  for (const auto& s : r.snippets) {
    if (s.padded) continue;
    nlohmann::ordered_json sj;
    sj["rank"] = s.rank;
    sj["title"] = s.title ? nlohmann::ordered_json(*s.title) : nlohmann::ordered_json(nullptr);
    sj["text"] = s.text;
    sj["source_domain"] = s.source_domain;
    snippets.push_back(std::move(sj));
  }
  j["snippets"] = std::move(snippets);
  return j;
}

// Parses one corpus line. Does not check the label against a scheme.
inline ClaimRecord record_from_json(const nlohmann::json& j) {
  ClaimRecord r;
  r.id = j.at("id").get<std::string>();
  r.claim_text = j.at("claim").get<std::string>();
  r.label = j.at("label").get<std::string>();
  r.origin_domain = j.at("origin_domain").get<std::string>();
  for (const auto& sj : j.at("snippets")) {
    EvidenceSnippet s;
    s.rank = sj.at("rank").get<int>();
    s.text = sj.at("text").get<std::string>();
    if (sj.contains("title") && !sj.at("title").is_null()) s.title = sj.at("title").get<std::string>();
    s.source_domain = sj.at("source_domain").get<std::string>();
    r.snippets.push_back(std::move(s));
  }
  return r;
}

inline std::string serialize_corpus(const std::vector<ClaimRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline void write_corpus(const std::string& path, const std::vector<ClaimRecord>& records) {
  write_file(path, serialize_corpus(records));
}

inline std::vector<ClaimRecord> parse_corpus(std::string_view contents, const LabelScheme& scheme) {
  std::vector<ClaimRecord> records;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < contents.size()) {
    auto end = contents.find('\n', start);
    if (end == std::string_view::npos) end = contents.size();
    const auto line = contents.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    const auto where = "line " + std::to_string(line_no) + ": ";
    ClaimRecord r;
    try {
      r = record_from_json(nlohmann::json::parse(line));
      validate_record(r);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + "malformed record (" + e.what() + ")");
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
    if (!scheme.knows(r.label))
      throw DataError(where + "unknown label '" + r.label + "' for scheme " + scheme.name);
    normalize_snippets(r);
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<ClaimRecord> load_corpus(const std::string& path, const LabelScheme& scheme) {
  return parse_corpus(read_file(path), scheme);
}

inline std::vector<ClaimRecord> filter_nonveracity(std::vector<ClaimRecord> records,
                                                   const LabelScheme& scheme) {
  std::erase_if(records, [&](const ClaimRecord& r) { return scheme.is_excluded(r.label); });
  return records;
}

// ---------------------------------------------------------------------------
// Stratified splitting.

struct SplitRatios {
  double train = 0.70;
  double val = 0.10;
  double test = 0.20;
};

struct SplitBundle {
  std::vector<ClaimRecord> train, val, test;
  SplitRatios ratios;
  std::uint64_t seed = 0;
};

// Largest-remainder apportionment of n items over the three ratios; ties in
// the fractional part go to the earlier part, the test part is filled last.
inline std::array<std::size_t, 3> apportion(std::size_t n, const SplitRatios& ratios) {
  const std::array<double, 3> r = {ratios.train, ratios.val, ratios.test};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t p = 0; p < 3; ++p) {
    const double quota = r[p] * static_cast<double>(n);
    counts[p] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    frac[p] = quota - static_cast<double>(counts[p]);
    assigned += counts[p];
  }
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % 3]];
  counts[2] = n - counts[0] - counts[1];
  return counts;
}

inline SplitBundle stratified_split(const std::vector<ClaimRecord>& records, std::uint64_t seed,
                                    SplitRatios ratios = {}) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw UsageError("split ratios must be non-negative and sum to 1");
  std::map<std::string, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < records.size(); ++i) by_label[records[i].label].push_back(i);

  std::vector<int> part(records.size(), -1);
  Rng rng(seed);
  for (auto& [label, idx] : by_label) {
    if (idx.size() < 3)
      throw DataError("label '" + label + "' has only " + std::to_string(idx.size()) +
                      " records; stratified splitting needs at least 3");
    shuffle(idx, rng);
    const auto counts = apportion(idx.size(), ratios);
    std::size_t k = 0;
    for (int p = 0; p < 3; ++p)
      for (std::size_t c = 0; c < counts[static_cast<std::size_t>(p)]; ++c) part[idx[k++]] = p;
  }

  SplitBundle b;
  b.ratios = ratios;
  b.seed = seed;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& dst = part[i] == 0 ? b.train : part[i] == 1 ? b.val : b.test;
    dst.push_back(records[i]);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Synthetic corpora with controlled label leakage into the evidence.

struct LeakageSpec {
  std::vector<std::string> labels = LabelScheme::snopes().labels;
  std::size_t n = 1000;
  double leak = 0.0;          // probability that the rank-1 snippet carries the label marker
  double decay = 1.0;         // marker probability scales by decay^(rank-1)
  double claim_signal = 0.0;  // probability that the claim carries the label marker
  std::size_t vocab_size = 2000;
  std::size_t claim_length = 10;
  std::size_t snippet_length = 12;
};

inline std::string filler_token(std::size_t i) { return "w" + std::to_string(i); }
inline std::string marker_token(std::size_t label_index) {
  return "marker" + std::to_string(label_index);
}

inline double marker_probability(const LeakageSpec& spec, int rank) {
  return spec.leak * std::pow(spec.decay, rank - 1);
}

inline std::vector<ClaimRecord> generate_leakage_corpus(const LeakageSpec& spec, std::uint64_t seed) {
  auto prob_ok = [](double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; };
  if (!prob_ok(spec.leak) || !prob_ok(spec.decay) || !prob_ok(spec.claim_signal))
    throw UsageError("leakage probabilities must lie in [0, 1]");
  if (spec.labels.empty() || spec.vocab_size == 0 || spec.claim_length == 0 || spec.snippet_length == 0)
    throw UsageError("leakage spec needs labels, vocabulary and non-zero lengths");

  Rng rng(seed);
  auto text = [&](std::size_t len, std::optional<std::size_t> marker) {
    std::vector<std::string> words(len);
    for (auto& w : words) w = filler_token(uniform_index(rng, spec.vocab_size));
    if (marker) words[uniform_index(rng, len)] = marker_token(*marker);
    std::string out;
    for (std::size_t i = 0; i < len; ++i) {
      if (i) out += ' ';
      out += words[i];
    }
    return out;
  };

  std::vector<ClaimRecord> records;
  records.reserve(spec.n);
  char id[32];
  for (std::size_t i = 0; i < spec.n; ++i) {
    ClaimRecord r;
    std::snprintf(id, sizeof(id), "synth-%06zu", i);
    r.id = id;
    const auto label = uniform_index(rng, spec.labels.size());
    r.label = spec.labels[label];
    r.origin_domain = "claims.example";
    const bool claim_marker = uniform_unit(rng) < spec.claim_signal;
    r.claim_text = text(spec.claim_length, claim_marker ? std::optional(label) : std::nullopt);
    for (int rank = 1; rank <= static_cast<int>(kSnippetSlots); ++rank) {
      EvidenceSnippet s;
      s.rank = rank;
      const bool marked = uniform_unit(rng) < marker_probability(spec, rank);
      s.text = text(spec.snippet_length, marked ? std::optional(label) : std::nullopt);
      s.source_domain = "site" + std::to_string(uniform_index(rng, 50)) + ".example";
      r.snippets.push_back(std::move(s));
    }
    records.push_back(std::move(r));
  }
  return records;
}

// ---------------------------------------------------------------------------
// MultiFC ingestion.

// "https://www.politifact.com/x" -> "politifact.com". Keeps the last two
// host labels, which is wrong for suffixes like co.uk but adequate here.
inline std::string registrable_domain(std::string_view url) {
  auto pos = url.find("://");
  if (pos != std::string_view::npos) url.remove_prefix(pos + 3);
  url = url.substr(0, url.find_first_of("/?#:"));
  std::string host;
  for (char c : url) host += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  const auto parts = split(host, '.');
  if (parts.size() <= 2) return host;
  return parts[parts.size() - 2] + "." + parts.back();
}

// Reads a MultiFC claims export (tab separated: claimID, claim, label,
// claimURL, ...) and the per-claim snippet files (rank, title, text, url).
// `id_prefix` keeps only claims whose id starts with it (e.g. "pomt", "snes").
inline std::vector<ClaimRecord> convert_multifc(const std::string& tsv_path,
                                                const std::string& snippet_dir,
                                                const std::string& id_prefix = "") {
  std::ifstream in(tsv_path);
  if (!in) throw DataError("cannot open " + tsv_path);
  std::vector<ClaimRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cols = split(line, '\t');
    if (cols.size() < 4)
      throw DataError(tsv_path + " line " + std::to_string(line_no) + ": expected at least 4 columns");
    if (!id_prefix.empty() && cols[0].rfind(id_prefix, 0) != 0) continue;
    ClaimRecord r;
    r.id = trim(cols[0]);
    r.claim_text = trim(cols[1]);
    r.label = trim(cols[2]);
    for (auto& c : r.label) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    r.origin_domain = registrable_domain(cols[3]);
    if (r.claim_text.empty()) continue;

    std::ifstream sn(std::filesystem::path(snippet_dir) / r.id);
    std::string sline;
    while (sn && std::getline(sn, sline)) {
      const auto f = split(sline, '\t');
      if (f.size() < 4) continue;
      EvidenceSnippet s;
      try {
        s.rank = std::stoi(f[0]);
      } catch (const std::exception&) {
        continue;
      }
      if (s.rank < 1 || s.rank > static_cast<int>(kSnippetSlots)) continue;
      s.title = trim(f[1]);
      s.text = trim(f[2]);
      s.source_domain = registrable_domain(f[3]);
      if (s.text.empty()) continue;
      r.snippets.push_back(std::move(s));
    }
    // Duplicate ranks in the export keep the first occurrence.
    std::set<int> seen;
    std::erase_if(r.snippets, [&](const auto& s) { return !seen.insert(s.rank).second; });
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace factprobe
