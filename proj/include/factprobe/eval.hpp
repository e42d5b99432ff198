#pragma once

// Within- and cross-dataset scoring, grouped three-class accuracies and the
// evidence-removal ablation.

#include <array>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "metrics.hpp"
#include "probes.hpp"

namespace factprobe {

enum class EvalMode { Within, Cross };
enum class AblationDirection { TopDown, BottomUp };

inline const char* mode_name(EvalMode m) { return m == EvalMode::Within ? "within" : "cross"; }
inline const char* direction_name(AblationDirection d) {
  return d == AblationDirection::TopDown ? "top_down" : "bottom_up";
}

struct LabelMetrics {
  std::string label;
  double precision = 0, recall = 0, f1 = 0;
  std::size_t support = 0;
};

struct MetricReport {
  std::string probe;
  std::string dataset;
  EvalMode mode = EvalMode::Within;
  double micro_f1 = 0;
  double macro_f1 = 0;
  std::vector<LabelMetrics> per_label;
  double acc_false = 0, acc_mix = 0, acc_true = 0;  // 0 when the group has no gold items
  std::array<std::size_t, 3> group_support{};
  std::size_t count = 0;
};

// Scores predicted labels (strings of `pred_scheme`) against gold labels
// (strings of `gold_scheme`). Cross mode maps both sides onto the canonical
// label set first.
inline MetricReport score_labels(const std::vector<std::string>& predicted, const std::vector<std::string>& gold,
                                 const LabelScheme& pred_scheme, const LabelScheme& gold_scheme, EvalMode mode) {
  if (predicted.size() != gold.size()) throw std::invalid_argument("predictions and golds differ in length");
  MetricReport rep;
  rep.mode = mode;
  rep.count = gold.size();
  std::vector<std::string> names;
  std::vector<std::size_t> p_idx, g_idx;
  if (mode == EvalMode::Within) {
    if (pred_scheme.labels != gold_scheme.labels)
      throw DataError("scheme mismatch between probe (" + pred_scheme.name + ") and corpus (" + gold_scheme.name +
                      "); use cross-dataset mode");
    names = pred_scheme.labels;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      p_idx.push_back(pred_scheme.index_of(predicted[i]));
      g_idx.push_back(gold_scheme.index_of(gold[i]));
    }
  } else {
    names = canonical_labels();
    auto canon_index = [&](const std::string& label, const LabelScheme& s) {
      const auto merged = merge_for_cross_eval(label, s);
      const auto it = std::find(names.begin(), names.end(), merged);
      if (it == names.end())
        throw DataError("label '" + label + "' of scheme " + s.name + " has no canonical counterpart");
      return static_cast<std::size_t>(it - names.begin());
    };
    for (std::size_t i = 0; i < gold.size(); ++i) {
      p_idx.push_back(canon_index(predicted[i], pred_scheme));
      g_idx.push_back(canon_index(gold[i], gold_scheme));
    }
  }
  const Confusion conf(p_idx, g_idx, names.size());
  rep.micro_f1 = conf.micro_f1();
  rep.macro_f1 = conf.macro_f1();
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto l = conf.label(k);
    rep.per_label.push_back({names[k], l.precision, l.recall, l.f1, l.support});
  }

  std::array<std::size_t, 3> hit{};
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto g = static_cast<std::size_t>(group_three_class(gold[i], gold_scheme));
    const auto p = static_cast<std::size_t>(group_three_class(predicted[i], pred_scheme));
    ++rep.group_support[g];
    if (g == p) ++hit[g];
  }
  auto acc = [&](std::size_t g) {
    return rep.group_support[g] ? static_cast<double>(hit[g]) / static_cast<double>(rep.group_support[g]) : 0.0;
  };
  rep.acc_false = acc(0);
  rep.acc_mix = acc(1);
  rep.acc_true = acc(2);
  return rep;
}

inline std::vector<std::string> predict_labels(const Probe& probe, const std::vector<ClaimRecord>& records) {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(probe.scheme.labels[probe.predict(r).argmax()]);
  return out;
}

inline MetricReport evaluate(const Probe& probe, const std::vector<ClaimRecord>& records,
                             const LabelScheme& corpus_scheme, EvalMode mode, const std::string& dataset = "") {
  std::vector<std::string> gold;
  gold.reserve(records.size());
  for (const auto& r : records) gold.push_back(r.label);
  auto rep = score_labels(predict_labels(probe, records), gold, probe.scheme, corpus_scheme, mode);
  rep.probe = probe.id();
  rep.dataset = dataset;
  return rep;
}

// Masks k snippet slots: slots 1..k from the top, or the last k slots.
inline ClaimRecord remove_snippets(ClaimRecord r, std::size_t k, AblationDirection direction) {
  const std::size_t n = r.snippets.size();
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) {
    auto& s = r.snippets[direction == AblationDirection::TopDown ? i : n - 1 - i];
    s.padded = true;
    s.text.clear();
    s.title.reset();
  }
  return r;
}

struct AblationCurve {
  std::string probe;
  AblationDirection direction = AblationDirection::TopDown;
  std::vector<double> macro_f1;  // index k = snippets removed, 0..10

  // Trapezoidal area under macro F1 over k.
  double area() const {
    double a = 0;
    for (std::size_t k = 1; k < macro_f1.size(); ++k) a += 0.5 * (macro_f1[k - 1] + macro_f1[k]);
    return a;
  }
};

inline AblationCurve ablation_curve(const Probe& probe, const std::vector<ClaimRecord>& records,
                                    const LabelScheme& corpus_scheme, AblationDirection direction) {
  if (probe.regime == InputRegime::ClaimOnly)
    throw std::invalid_argument("evidence ablation is undefined for a claim-only probe");
  AblationCurve curve;
  curve.probe = probe.id();
  curve.direction = direction;
  for (std::size_t k = 0; k <= kSnippetSlots; ++k) {
    std::vector<ClaimRecord> ablated;
    ablated.reserve(records.size());
    for (const auto& r : records) ablated.push_back(remove_snippets(r, k, direction));
    curve.macro_f1.push_back(evaluate(probe, ablated, corpus_scheme, EvalMode::Within).macro_f1);
  }
  return curve;
}

inline std::vector<AblationCurve> ablation_curves(const Probe& probe, const std::vector<ClaimRecord>& records,
                                                  const LabelScheme& corpus_scheme) {
  return {ablation_curve(probe, records, corpus_scheme, AblationDirection::TopDown),
          ablation_curve(probe, records, corpus_scheme, AblationDirection::BottomUp)};
}

// --------------------------------------------------------------------------
// CSV output.

inline const char* kMetricsCsvHeader = "probe,dataset,mode,micro_f1,macro_f1,acc_false,acc_mix,acc_true\n";
inline const char* kCurveCsvHeader = "probe,direction,k,macro_f1\n";

inline std::string metrics_csv_row(const MetricReport& r) {
  return r.probe + "," + r.dataset + "," + mode_name(r.mode) + "," + fmt_real(r.micro_f1) + "," +
         fmt_real(r.macro_f1) + "," + fmt_real(r.acc_false) + "," + fmt_real(r.acc_mix) + "," + fmt_real(r.acc_true) +
         "\n";
}

inline std::string curve_csv_rows(const AblationCurve& c) {
  std::string out;
  for (std::size_t k = 0; k < c.macro_f1.size(); ++k)
    out += c.probe + "," + direction_name(c.direction) + "," + std::to_string(k) + "," + fmt_real(c.macro_f1[k]) + "\n";
  return out;
}

}  // namespace factprobe
