#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <numeric>

#include "factprobe/probes.hpp"

using namespace factprobe;

namespace {

ProbeSettings small_settings() {
  ProbeSettings s;
  s.forest.n_trees = 20;
  s.forest.seed = 3;
  auto& t = s.train;
  t.embedding_dim = 8;
  t.hidden_dim = 8;
  t.lstm_layers = 1;
  t.model_dim = 16;
  t.heads = 2;
  t.ff_dim = 32;
  t.encoder_layers = 1;
  t.max_positions = 48;
  t.max_claim_tokens = 16;
  t.max_snippet_tokens = 16;
  t.min_count = 1;
  t.learning_rate = 5e-3;
  t.max_epochs = 2;
  t.patience = 1;
  t.seed = 5;
  return s;
}

SplitBundle small_splits(std::uint64_t seed = 1, std::size_t n = 120) {
  LeakageSpec spec;
  spec.n = n;
  spec.leak = 0.7;
  spec.decay = 0.9;
  spec.claim_signal = 0.5;
  return stratified_split(generate_leakage_corpus(spec, seed), seed);
}

std::string random_text(Rng& rng, std::size_t words) {
  std::string s;
  for (std::size_t i = 0; i < words; ++i) s += (i ? " " : "") + filler_token(uniform_index(rng, 2000));
  if (uniform_unit(rng) < 0.5) s += " " + marker_token(uniform_index(rng, 5));
  return s;
}

// Replaces the part of the record a probe of `regime` must not look at.
ClaimRecord counterfactual(ClaimRecord r, InputRegime regime, Rng& rng) {
  if (regime == InputRegime::ClaimOnly) {
    for (auto& s : r.snippets) {
      if (uniform_unit(rng) < 0.3) {
        s.padded = true;
        s.text.clear();
      } else {
        s.padded = false;
        s.text = random_text(rng, 1 + uniform_index(rng, 15));
      }
    }
  } else {
    r.claim_text = random_text(rng, 1 + uniform_index(rng, 15));
  }
  return r;
}

}  // namespace

class RegimeIsolation : public ::testing::TestWithParam<std::tuple<Family, InputRegime>> {};

TEST_P(RegimeIsolation, PredictionIgnoresHiddenPart) {
  const auto [family, regime] = GetParam();
  const auto splits = small_splits();
  const auto probe = fit_probe(family, regime, LabelScheme::snopes(), splits, small_settings());
  Rng rng(11);
  for (const auto& r : splits.test) {
    const auto p = probe.predict(r);
    for (int k = 0; k < 3; ++k) {
      const auto q = probe.predict(counterfactual(r, regime, rng));
      ASSERT_EQ(p.probabilities, q.probabilities) << probe.id() << " " << r.id;
    }
    EXPECT_NEAR(std::accumulate(p.probabilities.begin(), p.probabilities.end(), 0.0), 1.0, 1e-9);
    for (double v : p.probabilities) EXPECT_GE(v, 0.0);
    EXPECT_EQ(p.probabilities.size(), 5u);
  }
}

INSTANTIATE_TEST_SUITE_P(
    AllFamilies, RegimeIsolation,
    ::testing::Combine(::testing::Values(Family::Forest, Family::Recurrent, Family::Contextual),
                       ::testing::Values(InputRegime::ClaimOnly, InputRegime::EvidenceOnly)),
    [](const auto& info) {
      return std::string(family_name(std::get<0>(info.param))) +
             (std::get<1>(info.param) == InputRegime::ClaimOnly ? "_claim" : "_evidence");
    });

TEST(TfFeatures, JointVectorIsSumOfParts) {
  const auto splits = small_splits();
  const auto vocab = fit_vocabulary(splits.train, InputRegime::ClaimPlusEvidence, 1);
  for (const auto& r : splits.test) {
    std::map<std::uint32_t, double> sum;
    for (auto regime : {InputRegime::ClaimOnly, InputRegime::EvidenceOnly})
      for (const auto& [k, v] : featurize_tf(r, regime, vocab).entries) sum[k] += v;
    const auto joint = featurize_tf(r, InputRegime::ClaimPlusEvidence, vocab);
    ASSERT_EQ(joint.entries.size(), sum.size());
    for (const auto& [k, v] : joint.entries) EXPECT_EQ(v, sum[k]);
  }
}

TEST(RecurrentProbe, ZeroParametersGiveUniformDistribution) {
  const auto splits = small_splits();
  auto probe = make_probe(Family::Recurrent, InputRegime::ClaimPlusEvidence, LabelScheme::snopes(), splits.train,
                          small_settings());
  std::get<nn::RecurrentNet<double>>(probe.model).visit(
      [](const std::string&, nn::Parameter<double>& p) { p.value.setZero(); }, "");
  for (const auto& r : splits.test) {
    const auto d = probe.predict(r);
    for (double v : d.probabilities) EXPECT_EQ(v, 0.2);
    EXPECT_EQ(d.argmax(), 0u);
  }
}

TEST(EvidenceProbes, NoRealSnippetsFlagsZeroEvidence) {
  const auto splits = small_splits();
  auto record = splits.test.front();
  for (auto& s : record.snippets) {
    s.padded = true;
    s.text.clear();
  }
  for (auto family : {Family::Forest, Family::Recurrent, Family::Contextual}) {
    const auto probe = fit_probe(family, InputRegime::EvidenceOnly, LabelScheme::snopes(), splits, small_settings());
    EXPECT_TRUE(probe.predict(record).zero_evidence) << family_name(family);
    EXPECT_FALSE(probe.predict(splits.test.front()).zero_evidence) << family_name(family);
  }
}

TEST(EvidenceProbes, UniformPoolingIgnoresSnippetOrder) {
  const auto splits = small_splits();
  const auto settings = small_settings();
  auto rec = make_probe(Family::Recurrent, InputRegime::EvidenceOnly, LabelScheme::snopes(), splits.train, settings);
  auto ctx = make_probe(Family::Contextual, InputRegime::EvidenceOnly, LabelScheme::snopes(), splits.train, settings);
  std::get<nn::RecurrentNet<double>>(rec.model).snippet_attention.w.value.setZero();
  std::get<nn::ContextualNet<double>>(ctx.model).snippet_attention.w.value.setZero();
  Rng rng(4);
  for (const auto& r : splits.test) {
    auto shuffled = r;
    shuffle(shuffled.snippets, rng);
    for (const auto* probe : {&rec, &ctx}) {
      const auto a = probe->predict(r), b = probe->predict(shuffled);
      for (std::size_t k = 0; k < a.probabilities.size(); ++k)
        EXPECT_NEAR(a.probabilities[k], b.probabilities[k], 1e-12);
    }
  }
}

TEST(RecurrentProbe, FullyLeakedEvidenceIsLearned) {
  LeakageSpec spec;
  spec.n = 400;
  spec.leak = 1.0;
  const auto splits = stratified_split(generate_leakage_corpus(spec, 8), 8);
  auto settings = small_settings();
  settings.train.embedding_dim = 16;
  settings.train.hidden_dim = 16;
  settings.train.dropout = 0.0;
  settings.train.max_epochs = 20;
  settings.train.patience = 20;
  const auto probe = fit_probe(Family::Recurrent, InputRegime::EvidenceOnly, LabelScheme::snopes(), splits, settings);
  ASSERT_LE(probe.history.epochs.size(), 20u);
  double best = 0;
  for (const auto& e : probe.history.epochs) best = std::max(best, e.val_macro_f1);
  EXPECT_GE(best, 0.95);
}

class CheckpointRoundTrip : public ::testing::TestWithParam<Family> {};

TEST_P(CheckpointRoundTrip, SameBytesSamePredictions) {
  const auto splits = small_splits();
  const auto probe = fit_probe(GetParam(), InputRegime::ClaimPlusEvidence, LabelScheme::snopes(), splits,
                               small_settings());
  const auto path = (std::filesystem::temp_directory_path() / "factprobe_probe.json").string();
  save_probe(probe, path);
  const auto back = load_probe(path);
  EXPECT_EQ(back.to_json().dump(), probe.to_json().dump());
  EXPECT_EQ(back.id(), probe.id());
  for (const auto& r : splits.test) EXPECT_EQ(back.predict(r).probabilities, probe.predict(r).probabilities);

  auto tampered = probe.to_json();
  tampered["vocabulary"][2] = "not-a-token";
  EXPECT_THROW(Probe::from_json(tampered), DataError);
  auto old = probe.to_json();
  old["version"] = kCheckpointVersion + 1;
  EXPECT_THROW(Probe::from_json(old), DataError);
  std::filesystem::remove(path);
}

INSTANTIATE_TEST_SUITE_P(AllFamilies, CheckpointRoundTrip,
                         ::testing::Values(Family::Forest, Family::Recurrent, Family::Contextual),
                         [](const auto& info) { return std::string(family_name(info.param)); });

TEST(Probe, TrainingIsDeterministic) {
  const auto splits = small_splits(2);
  for (auto family : {Family::Forest, Family::Recurrent, Family::Contextual}) {
    const auto a = fit_probe(family, InputRegime::ClaimPlusEvidence, LabelScheme::snopes(), splits, small_settings());
    const auto b = fit_probe(family, InputRegime::ClaimPlusEvidence, LabelScheme::snopes(), splits, small_settings());
    EXPECT_EQ(a.to_json().dump(), b.to_json().dump()) << family_name(family);
  }
}

TEST(Probe, PretrainedEmbeddingsAreLoadedAndFrozen) {
  const auto splits = small_splits();
  const auto path = (std::filesystem::temp_directory_path() / "factprobe_vectors.txt").string();
  write_file(path, "marker0 1 0 0 0\nmarker1 0 1 0 0\nw5 0.5 0.5 0.5 0.5\n");
  auto settings = small_settings();
  settings.embeddings_path = path;
  settings.oov_policy = OovPolicy::Zeros;
  const auto probe = fit_probe(Family::Recurrent, InputRegime::EvidenceOnly, LabelScheme::snopes(), splits, settings);
  const auto& net = std::get<nn::RecurrentNet<double>>(probe.model);
  EXPECT_EQ(net.embedding.dim(), 4);
  EXPECT_FALSE(net.embedding.table.trainable);
  const auto id = probe.vocab.find("marker1");
  ASSERT_TRUE(id.has_value());
  EXPECT_EQ(net.embedding.table.value(static_cast<Eigen::Index>(*id), 1), 1.0);
  const auto back = Probe::from_json(nlohmann::json::parse(probe.to_json().dump()));
  EXPECT_EQ(std::get<nn::RecurrentNet<double>>(back.model).embedding.table.value, net.embedding.table.value);
  std::filesystem::remove(path);
}
