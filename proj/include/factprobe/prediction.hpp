#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace factprobe {

enum class Family { Forest, Recurrent, Contextual };
enum class InputRegime { ClaimOnly, EvidenceOnly, ClaimPlusEvidence };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::Forest: return "forest";
    case Family::Recurrent: return "recurrent";
    case Family::Contextual: return "contextual";
  }
  return "?";
}

inline const char* regime_name(InputRegime r) {
  switch (r) {
    case InputRegime::ClaimOnly: return "claim";
    case InputRegime::EvidenceOnly: return "evidence";
    case InputRegime::ClaimPlusEvidence: return "claim+evidence";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "forest" || s == "rf") return Family::Forest;
  if (s == "recurrent" || s == "lstm") return Family::Recurrent;
  if (s == "contextual" || s == "transformer") return Family::Contextual;
  throw std::invalid_argument("unknown model family '" + s + "'");
}

inline InputRegime parse_regime(const std::string& s) {
  if (s == "claim") return InputRegime::ClaimOnly;
  if (s == "evidence") return InputRegime::EvidenceOnly;
  if (s == "claim+evidence" || s == "joint") return InputRegime::ClaimPlusEvidence;
  throw std::invalid_argument("unknown input regime '" + s + "'");
}

inline bool uses_claim(InputRegime r) { return r != InputRegime::EvidenceOnly; }
inline bool uses_evidence(InputRegime r) { return r != InputRegime::ClaimOnly; }

// Probability vector over the labels of a scheme.
struct PredictionDistribution {
  std::vector<double> probabilities;
  // Set when the evidence representation had to be replaced by zeros because
  // every snippet slot was padded.
  bool zero_evidence = false;

  std::size_t size() const { return probabilities.size(); }

  // Ties go to the lowest label index.
  std::size_t argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probabilities.size(); ++i)
      if (probabilities[i] > probabilities[best]) best = i;
    return best;
  }

  bool operator==(const PredictionDistribution&) const = default;
};

}  // namespace factprobe
