#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "factprobe/neural/gradcheck.hpp"
#include "factprobe/neural/models.hpp"
#include "factprobe/neural/train.hpp"

using namespace factprobe;
using namespace factprobe::nn;

using Matd = Mat<double>;
using Vecd = Vec<double>;

namespace {

Matd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (uniform_unit(rng) * 2 - 1) * scale;
  return m;
}

// A layer plus a differentiable input, so that input gradients are checked too.
template <class Layer>
struct Harness {
  Layer layer;
  Parameter<double> x;
  Matd r;  // loss = sum(r .* output)

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    layer.visit(f, join_name(prefix, "layer"));
    f(join_name(prefix, "x"), x);
  }
};

template <class Layer>
Harness<Layer> make_harness(Layer layer, Eigen::Index in_rows, Eigen::Index cols, Eigen::Index out_rows, Rng& rng) {
  Harness<Layer> h{std::move(layer), Parameter<double>(in_rows, cols), random_matrix(out_rows, cols, rng)};
  h.x.value = random_matrix(in_rows, cols, rng);
  return h;
}

void randomize(auto& net, Rng& rng, double scale = 0.5) {
  net.visit([&](const std::string&, Parameter<double>& p) { p.value = random_matrix(p.rows(), p.cols(), rng, scale); }, "");
}

}  // namespace

TEST(SoftmaxCe, Examples) {
  const auto uniform = softmax_ce<double>(Vecd::Constant(5, 0.3), 2);
  EXPECT_NEAR(uniform.loss, std::log(5.0), 1e-12);
  Vecd big = Vecd::Zero(3);
  big(1) = 1e6;
  const auto stable = softmax_ce<double>(big, 1);
  EXPECT_TRUE(std::isfinite(stable.loss));
  EXPECT_NEAR(stable.loss, 0.0, 1e-12);
  const Vecd l = (Vecd(3) << 1, 2, 3).finished();
  const auto r = softmax_ce<double>(l, 0);
  EXPECT_NEAR(r.loss, 3 - 1 + std::log(std::exp(-2.0) + std::exp(-1.0) + 1), 1e-12);
  EXPECT_NEAR(r.loss, 2.4076, 1e-4);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(r.gradient(0), std::exp(1.0) / z - 1, 1e-12);
  EXPECT_NEAR(r.gradient(2), std::exp(3.0) / z, 1e-12);
}

TEST(SoftmaxCe, SoftmaxIsADistribution) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const Vecd logits = random_matrix(1 + static_cast<Eigen::Index>(uniform_index(rng, 8)), 1, rng, 500.0);
    const Vecd p = softmax<double>(logits);
    EXPECT_NEAR(p.sum(), 1.0, 1e-9);
    EXPECT_GE(p.minCoeff(), 0.0);
  }
}

TEST(AttnPool, Examples) {
  AttnPool<double> pool(2);
  typename AttnPool<double>::Cache cache;
  const Matd one = (Matd(2, 1) << 0.3, -2).finished();
  pool.w.value << 5, 7;
  EXPECT_EQ(pool.forward(one, cache), Vecd(one.col(0)));

  const Matd three = (Matd(2, 3) << 1, 2, 9, 3, 4, 9).finished();
  pool.w.value.setZero();
  const Vecd mean = pool.forward(three, {true, true, false}, cache);
  EXPECT_NEAR(mean(0), 1.5, 1e-15);
  EXPECT_NEAR(mean(1), 3.5, 1e-15);

  const Matd two = Matd::Identity(2, 2);
  pool.w.value << std::log(3.0), 0;
  const Vecd out = pool.forward(two, cache);
  EXPECT_NEAR(cache.alpha(0), 0.75, 1e-15);
  EXPECT_NEAR(cache.alpha(1), 0.25, 1e-15);
  EXPECT_NEAR(out(0), 0.75, 1e-15);
  EXPECT_NEAR(out(1), 0.25, 1e-15);

  EXPECT_THROW(pool.forward(two, {false, false}, cache), std::invalid_argument);
}

TEST(MatchCombine, Examples) {
  const Vecd a = (Vecd(2) << 1, 2).finished(), b = (Vecd(2) << 3, 4).finished();
  EXPECT_EQ(match_combine<double>(a, b), (Vecd(8) << 1, 2, 3, 4, -2, -2, 3, 8).finished());
  const Vecd same = match_combine<double>(a, a);
  EXPECT_EQ(same.segment(4, 2), Vecd::Zero(2));
  EXPECT_EQ(same.segment(6, 2), a.cwiseProduct(a));
  EXPECT_THROW(match_combine<double>(a, Vecd::Zero(3)), std::invalid_argument);
}

TEST(MatchCombine, MatchesElementwiseRecomputation) {
  Rng rng(2);
  const Vecd a = random_matrix(128, 1, rng), b = random_matrix(128, 1, rng);
  const Vecd m = match_combine<double>(a, b);
  ASSERT_EQ(m.size(), 512);
  for (int i = 0; i < 128; ++i) {
    EXPECT_EQ(m(i), a(i));
    EXPECT_EQ(m(128 + i), b(i));
    EXPECT_EQ(m(256 + i), a(i) - b(i));
    EXPECT_EQ(m(384 + i), a(i) * b(i));
  }
}

TEST(BiLstm, ZeroParametersGiveZeroStates) {
  BiLstm<double> lstm(3, 4, 2);
  Embedding<double> emb(10, 3);
  Rng rng(3);
  emb.table.value = random_matrix(10, 3, rng);
  typename BiLstm<double>::Cache cache;
  const std::vector<std::size_t> ids = {4, 5, 6};
  const auto seq = bilstm_encode<double>(ids, emb, lstm, cache);
  EXPECT_EQ(seq.states.rows(), 8);
  EXPECT_EQ(seq.states.cols(), 3);
  EXPECT_EQ(seq.states.norm(), 0.0);
}

TEST(BiLstm, SingleStepDirectionsAgree) {
  Rng rng(4);
  BiLstm<double> lstm(3, 4, 1);
  lstm.init(rng);
  lstm.layers[0].bwd = lstm.layers[0].fwd;
  typename BiLstm<double>::Cache cache;
  const Matd out = lstm.forward(random_matrix(3, 1, rng), cache);
  EXPECT_EQ(out.topRows(4), out.bottomRows(4));
}

TEST(BiLstm, EmptySequenceIsOneMaskedPad) {
  Rng rng(5);
  BiLstm<double> lstm(3, 2, 1);
  lstm.init(rng);
  Embedding<double> emb(5, 3);
  typename BiLstm<double>::Cache cache;
  const auto seq = bilstm_encode<double>(std::span<const std::size_t>(), emb, lstm, cache);
  EXPECT_EQ(seq.states.cols(), 1);
  EXPECT_EQ(seq.mask, std::vector<bool>{false});
  EXPECT_FALSE(seq.any_unmasked());
}

TEST(BiLstm, ForgetBiasStartsAtOne) {
  Rng rng(6);
  LstmCell<double> cell(3, 4);
  cell.init(rng);
  EXPECT_EQ(cell.bias.value.block(0, 0, 4, 1), Matd::Zero(4, 1));
  EXPECT_EQ(cell.bias.value.block(4, 0, 4, 1), Matd::Ones(4, 1));
  EXPECT_EQ(cell.bias.value.block(8, 0, 8, 1), Matd::Zero(8, 1));
}

TEST(LayerNorm, ConstantVectorNormalizesToZero) {
  LayerNorm<double> ln(6);
  typename LayerNorm<double>::Cache cache;
  EXPECT_EQ(ln.normalize(Matd::Constant(6, 2, 3.5), cache), Matd::Zero(6, 2));
}

TEST(MultiHeadAttention, SingleUnmaskedTokenReturnsItsValue) {
  Rng rng(7);
  MultiHeadAttention<double> mha(8, 2);
  mha.init(rng);
  const Matd x = random_matrix(8, 4, rng);
  typename MultiHeadAttention<double>::Cache cache;
  const Matd ctx = mha.attend(x, {false, false, true, false}, cache);
  const Matd v = mha.value.forward(x);
  for (Eigen::Index q = 0; q < 4; ++q) EXPECT_LT((ctx.col(q) - v.col(2)).norm(), 1e-12);
  EXPECT_THROW(MultiHeadAttention<double>(6, 4), std::invalid_argument);
}

TEST(TransformerEncoder, PairInputLayoutAndTruncation) {
  TransformerEncoder<double> enc(20, 8, 1, 2, 16, 10);
  const std::vector<std::size_t> a = {5, 6, 7}, b = {8, 9, 10, 11, 12, 13};
  const std::span<const std::size_t> bs(b);
  const auto single = enc.build_input(a, nullptr, 2, 3);
  EXPECT_EQ(single.ids, (std::vector<std::size_t>{2, 5, 6, 7, 3}));
  EXPECT_EQ(single.segments, (std::vector<std::size_t>{0, 0, 0, 0, 0}));
  const auto pair = enc.build_input(a, &bs, 2, 3);  // 3 + 6 + 3 = 12 > 10: b loses two tokens
  EXPECT_EQ(pair.ids, (std::vector<std::size_t>{2, 5, 6, 7, 3, 8, 9, 10, 11, 3}));
  EXPECT_EQ(pair.segments, (std::vector<std::size_t>{0, 0, 0, 0, 0, 1, 1, 1, 1, 1}));
  const std::vector<std::size_t> long_a = {5, 6, 7, 8, 9, 10, 11, 12, 13};
  const std::vector<std::size_t> short_b = {14};
  const std::span<const std::size_t> sb(short_b);
  const auto squeezed = enc.build_input(long_a, &sb, 2, 3);  // b is emptied before a shrinks
  EXPECT_EQ(squeezed.ids, (std::vector<std::size_t>{2, 5, 6, 7, 8, 9, 10, 11, 3, 3}));
}

// --------------------------------------------------------------------------
// Finite-difference checks.

namespace {

struct EmbeddingNet {
  Embedding<double> emb{6, 3};
  Matd r;
  template <class F>
  void visit(F&& f, const std::string& p) { emb.visit(f, p); }
};

struct EncodeNet {
  Embedding<double> emb{8, 3};
  BiLstm<double> lstm{3, 4, 1};
  Matd r;
  template <class F>
  void visit(F&& f, const std::string& p) {
    emb.visit(f, join_name(p, "emb"));
    lstm.visit(f, join_name(p, "lstm"));
  }
};

struct MatchNet {
  AttnPool<double> pool{12};
  Parameter<double> claim{3, 1}, evidence{3, 4};
  Linear<double> head{12, 3};
  template <class F>
  void visit(F&& f, const std::string& p) {
    pool.visit(f, join_name(p, "pool"));
    head.visit(f, join_name(p, "head"));
    f("claim", claim);
    f("evidence", evidence);
  }
};

struct EncoderNet {
  TransformerEncoder<double> enc{12, 8, 2, 2, 16, 12};
  Vecd r;
  template <class F>
  void visit(F&& f, const std::string& p) { enc.visit(f, p); }
};

}  // namespace

TEST(GradCheck, Linear) {
  Rng rng(10);
  Linear<double> layer(4, 3);
  layer.init(rng);
  layer.bias.value = random_matrix(3, 1, rng);
  auto h = make_harness(layer, 4, 5, 3, rng);
  const auto res = grad_check(h, [](auto& h, bool backward) {
    const Matd y = h.layer.forward(h.x.value);
    if (backward) h.x.grad += h.layer.backward(h.x.value, h.r);
    return y.cwiseProduct(h.r).sum();
  });
  EXPECT_EQ(res.checked, 4u * 3 + 3 + 4 * 5);
  EXPECT_LT(res.max_relative_error, 1e-7) << res.worst_parameter;
}

TEST(GradCheck, DetectsWrongGradient) {
  Rng rng(10);
  Linear<double> layer(4, 3);
  layer.init(rng);
  auto h = make_harness(layer, 4, 2, 3, rng);
  const auto res = grad_check(h, [](auto& h, bool backward) {
    const Matd y = h.layer.forward(h.x.value);
    if (backward) {
      h.x.grad += h.layer.backward(h.x.value, h.r);
      h.layer.bias.grad(1, 0) *= 1.01;
    }
    return y.cwiseProduct(h.r).sum();
  });
  EXPECT_NEAR(res.max_relative_error, 0.01 / 1.01, 1e-6);
  EXPECT_EQ(res.worst_parameter, "layer.bias");
  EXPECT_EQ(res.worst_index, 1);
}

TEST(GradCheck, Embedding) {
  Rng rng(11);
  EmbeddingNet net;
  net.emb.table.value = random_matrix(6, 3, rng);
  const std::vector<std::size_t> ids = {1, 4, 4, 2};
  net.r = random_matrix(3, 4, rng);
  const auto res = grad_check(net, [&](EmbeddingNet& n, bool backward) {
    const Matd y = n.emb.forward(ids);
    if (backward) n.emb.backward(ids, n.r);
    return y.cwiseProduct(n.r).sum();
  });
  EXPECT_LT(res.max_relative_error, 1e-7) << res.worst_parameter;
}

TEST(GradCheck, PadRowNeverUpdated) {
  Embedding<double> emb(4, 2);
  const std::vector<std::size_t> ids = {0, 2, 0};
  emb.backward(ids, Matd::Ones(2, 3));
  EXPECT_EQ(emb.table.grad.row(0).norm(), 0.0);
  EXPECT_EQ(emb.table.grad.row(2).sum(), 2.0);
  Embedding<double> frozen(4, 2, false);
  frozen.backward(ids, Matd::Ones(2, 3));
  EXPECT_EQ(frozen.table.grad.size(), 0);
}

TEST(GradCheck, LstmCellBothDirections) {
  for (bool reverse : {false, true}) {
    Rng rng(12);
    LstmCell<double> cell(3, 4);
    cell.init(rng);
    cell.bias.value = random_matrix(16, 1, rng);
    auto h = make_harness(cell, 3, 3, 4, rng);
    const auto res = grad_check(h, [&](auto& h, bool backward) {
      typename LstmCell<double>::Cache cache;
      const Matd y = h.layer.forward(h.x.value, reverse, cache);
      if (backward) h.x.grad += h.layer.backward(cache, h.r);
      return y.cwiseProduct(h.r).sum();
    });
    EXPECT_LT(res.max_relative_error, 1e-4) << res.worst_parameter << " reverse=" << reverse;
  }
}

TEST(GradCheck, StackedBiLstmWithDropout) {
  Rng rng(13);
  BiLstm<double> lstm(3, 4, 2, 0.3);
  lstm.init(rng);
  auto h = make_harness(lstm, 3, 3, 8, rng);
  const auto res = grad_check(h, [&](auto& h, bool backward) {
    typename BiLstm<double>::Cache cache;
    Rng drop(99);  // same mask on every evaluation
    const Matd y = h.layer.forward(h.x.value, cache, &drop);
    if (backward) h.x.grad += h.layer.backward(cache, h.r);
    return y.cwiseProduct(h.r).sum();
  });
  EXPECT_LT(res.max_relative_error, 1e-4) << res.worst_parameter;
}

TEST(GradCheck, BilstmEncodeThroughEmbedding) {
  Rng rng(14);
  EncodeNet net;
  net.emb.table.value = random_matrix(8, 3, rng);
  net.lstm.init(rng);
  net.r = random_matrix(8, 3, rng);
  const std::vector<std::size_t> ids = {3, 7, 5};
  const auto res = grad_check(net, [&](EncodeNet& n, bool backward) {
    typename BiLstm<double>::Cache cache;
    const auto seq = bilstm_encode<double>(ids, n.emb, n.lstm, cache);
    if (backward) n.emb.backward(ids, n.lstm.backward(cache, n.r));
    return seq.states.cwiseProduct(n.r).sum();
  });
  EXPECT_LT(res.max_relative_error, 1e-4) << res.worst_parameter;
}

TEST(GradCheck, AttnPoolWithMask) {
  Rng rng(15);
  AttnPool<double> pool(5);
  pool.init(rng);
  pool.b.value(0, 0) = 0.3;
  auto h = make_harness(pool, 5, 4, 5, rng);
  const std::vector<bool> mask = {true, false, true, true};
  const Vecd r = h.r.col(0);
  const auto res = grad_check(h, [&](auto& h, bool backward) {
    typename AttnPool<double>::Cache cache;
    const Vecd y = h.layer.forward(h.x.value, mask, cache);
    if (backward) h.x.grad += h.layer.backward(cache, r);
    return y.dot(r);
  });
  EXPECT_LT(res.max_relative_error, 1e-4) << res.worst_parameter;
  // the bias cannot change a softmax
  EXPECT_NEAR(h.layer.b.grad(0, 0), 0.0, 1e-12);
}

TEST(GradCheck, AttnPoolOverMatchCombine) {
  Rng rng(16);
  MatchNet net;
  net.pool.init(rng);
  net.head.init(rng);
  net.claim.value = random_matrix(3, 1, rng);
  net.evidence.value = random_matrix(3, 4, rng);
  const auto res = grad_check(net, [](MatchNet& n, bool backward) {
    Matd cols(12, 4);
    for (Eigen::Index j = 0; j < 4; ++j)
      cols.col(j) = match_combine<double>(n.claim.value.col(0), n.evidence.value.col(j));
    typename AttnPool<double>::Cache cache;
    const Vecd o = n.pool.forward(cols, cache);
    const auto ce = softmax_ce<double>(n.head.forward(o), 1);
    if (backward) {
      const Matd d_cols = n.pool.backward(cache, n.head.backward(o, ce.gradient));
      Vecd d_claim = Vecd::Zero(3);
      for (Eigen::Index j = 0; j < 4; ++j) {
        Vecd d_e = Vecd::Zero(3);
        match_combine_backward<double>(n.claim.value.col(0), n.evidence.value.col(j), d_cols.col(j), d_claim, d_e);
        n.evidence.grad.col(j) += d_e;
      }
      n.claim.grad.col(0) += d_claim;
    }
    return ce.loss;
  });
  EXPECT_LT(res.max_relative_error, 1e-4) << res.worst_parameter;
}

TEST(GradCheck, LayerNorm) {
  Rng rng(17);
  LayerNorm<double> ln(6);
  ln.gain.value = random_matrix(6, 1, rng);
  ln.shift.value = random_matrix(6, 1, rng);
  auto h = make_harness(ln, 6, 3, 6, rng);
  const auto res = grad_check(h, [](auto& h, bool backward) {
    typename LayerNorm<double>::Cache cache;
    const Matd y = h.layer.forward(h.x.value, cache);
    if (backward) h.x.grad += h.layer.backward(cache, h.r);
    return y.cwiseProduct(h.r).sum();
  });
  EXPECT_LT(res.max_relative_error, 1e-4) << res.worst_parameter;
}

TEST(GradCheck, MultiHeadAttentionWithMask) {
  Rng rng(18);
  MultiHeadAttention<double> mha(8, 2);
  mha.init(rng);
  auto h = make_harness(mha, 8, 4, 8, rng);
  const std::vector<bool> mask = {true, true, false, true};
  const auto res = grad_check(h, [&](auto& h, bool backward) {
    typename MultiHeadAttention<double>::Cache cache;
    const Matd y = h.layer.forward(h.x.value, mask, cache);
    if (backward) h.x.grad += h.layer.backward(cache, h.r);
    return y.cwiseProduct(h.r).sum();
  });
  EXPECT_LT(res.max_relative_error, 1e-4) << res.worst_parameter;
}

TEST(GradCheck, TransformerBlock) {
  Rng rng(19);
  TransformerBlock<double> block(8, 2, 12);
  block.init(rng);
  randomize(block, rng, 0.6);
  auto h = make_harness(block, 8, 4, 8, rng);
  const std::vector<bool> mask(4, true);
  const auto res = grad_check(h, [&](auto& h, bool backward) {
    typename TransformerBlock<double>::Cache cache;
    const Matd y = h.layer.forward(h.x.value, mask, cache);
    if (backward) h.x.grad += h.layer.backward(cache, h.r);
    return y.cwiseProduct(h.r).sum();
  });
  EXPECT_LT(res.max_relative_error, 1e-4) << res.worst_parameter;
}

TEST(GradCheck, TransformerEncoderCls) {
  Rng rng(20);
  EncoderNet net;
  net.enc.init(rng);
  randomize(net.enc, rng, 0.5);
  net.r = random_matrix(8, 1, rng);
  const std::vector<std::size_t> a = {4, 5, 6}, b = {7, 8};
  const std::span<const std::size_t> bs(b);
  const auto in = net.enc.build_input(a, &bs, 2, 3);
  const auto res = grad_check(net, [&](EncoderNet& n, bool backward) {
    typename TransformerEncoder<double>::Cache cache;
    const auto out = transformer_encode<double>(n.enc, in, cache);
    if (backward) {
      Matd d = Matd::Zero(8, static_cast<Eigen::Index>(in.ids.size()));
      d.col(0) = n.r;
      n.enc.backward(cache, d);
    }
    return out.cls.dot(n.r);
  });
  EXPECT_LT(res.max_relative_error, 1e-4) << res.worst_parameter;
}

namespace {

SequenceExample toy_example(Rng& rng, std::size_t vocab, std::size_t slots = 4) {
  SequenceExample ex;
  for (int i = 0; i < 3; ++i) ex.claim.push_back(2 + uniform_index(rng, vocab - 2));
  for (std::size_t s = 0; s < slots; ++s) {
    if (s == 1) {
      ex.snippets.emplace_back();  // masked slot
      continue;
    }
    std::vector<std::size_t> ids;
    for (int i = 0; i < 2 + static_cast<int>(s % 2); ++i) ids.push_back(2 + uniform_index(rng, vocab - 2));
    ex.snippets.emplace_back(ids);
  }
  return ex;
}

}  // namespace

class RecurrentGradCheck : public ::testing::TestWithParam<InputRegime> {};

TEST_P(RecurrentGradCheck, WholeNetwork) {
  typename RecurrentNet<double>::Shape shape;
  shape.vocab = 10;
  shape.embedding_dim = 3;
  shape.hidden = 3;
  shape.layers = 2;
  shape.labels = 3;
  shape.regime = GetParam();
  shape.dropout = 0.2;
  shape.freeze_embeddings = false;
  RecurrentNet<double> net(shape, 5);
  Rng rng(21);
  const auto ex = toy_example(rng, 10);
  const auto res = grad_check(net, [&](RecurrentNet<double>& n, bool backward) {
    Rng drop(7);
    typename RecurrentNet<double>::Forward f;
    const auto ce = softmax_ce<double>(n.forward(ex, f, &drop), 2);
    if (backward) n.backward(f, ce.gradient);
    return ce.loss;
  });
  EXPECT_GT(res.checked, 0u);
  EXPECT_LT(res.max_relative_error, 1e-4) << res.worst_parameter;
}

class ContextualGradCheck : public ::testing::TestWithParam<InputRegime> {};

TEST_P(ContextualGradCheck, WholeNetwork) {
  typename ContextualNet<double>::Shape shape;
  shape.vocab = 10;
  shape.model_dim = 8;
  shape.layers = 1;
  shape.heads = 2;
  shape.ff_dim = 8;
  shape.max_positions = 12;
  shape.labels = 3;
  shape.regime = GetParam();
  shape.dropout = 0.2;
  ContextualNet<double> net(shape, 6);
  Rng rng(22);
  const auto ex = toy_example(rng, 10);
  const auto res = grad_check(net, [&](ContextualNet<double>& n, bool backward) {
    Rng drop(8);
    typename ContextualNet<double>::Forward f;
    const auto ce = softmax_ce<double>(n.forward(ex, f, &drop), 0);
    if (backward) n.backward(f, ce.gradient);
    return ce.loss;
  });
  EXPECT_LT(res.max_relative_error, 1e-4) << res.worst_parameter;
}

INSTANTIATE_TEST_SUITE_P(Regimes, RecurrentGradCheck,
                         ::testing::Values(InputRegime::ClaimOnly, InputRegime::EvidenceOnly,
                                           InputRegime::ClaimPlusEvidence));
INSTANTIATE_TEST_SUITE_P(Regimes, ContextualGradCheck,
                         ::testing::Values(InputRegime::ClaimOnly, InputRegime::EvidenceOnly,
                                           InputRegime::ClaimPlusEvidence));

// --------------------------------------------------------------------------
// Whole-network properties.

TEST(RecurrentNet, ZeroParametersGiveUniformOutput) {
  typename RecurrentNet<double>::Shape shape{20, 4, 3, 2, 5, InputRegime::ClaimPlusEvidence, 0.0, true};
  RecurrentNet<double> net(shape, 1);
  net.visit([](const std::string&, Parameter<double>& p) { p.value.setZero(); }, "");
  Rng rng(3);
  const auto ex = toy_example(rng, 20, 10);
  typename RecurrentNet<double>::Forward f;
  const Vecd p = softmax<double>(net.forward(ex, f));
  for (Eigen::Index k = 0; k < 5; ++k) EXPECT_EQ(p(k), 0.2);
  EXPECT_NEAR(softmax_ce<double>(f.logits, 0).loss, std::log(5.0), 1e-12);
}

TEST(RecurrentNet, MovingMaskedSlotsLeavesLossUnchanged) {
  typename RecurrentNet<double>::Shape shape{20, 4, 3, 1, 3, InputRegime::ClaimPlusEvidence, 0.0, true};
  RecurrentNet<double> net(shape, 2);
  Rng rng(4);
  auto ex = toy_example(rng, 20, 6);
  auto moved = ex;
  std::stable_partition(moved.snippets.begin(), moved.snippets.end(), [](const auto& s) { return !s.has_value(); });
  ASSERT_NE(moved.snippets, ex.snippets);
  typename RecurrentNet<double>::Forward f1, f2;
  EXPECT_EQ(softmax_ce<double>(net.forward(ex, f1), 1).loss, softmax_ce<double>(net.forward(moved, f2), 1).loss);
}

TEST(RecurrentNet, AllSlotsMaskedFlagsZeroEvidence) {
  typename RecurrentNet<double>::Shape shape{20, 4, 3, 1, 3, InputRegime::EvidenceOnly, 0.0, true};
  RecurrentNet<double> net(shape, 2);
  SequenceExample ex;
  ex.claim = {3, 4};
  ex.snippets.assign(10, std::nullopt);
  typename RecurrentNet<double>::Forward f;
  net.forward(ex, f);
  EXPECT_TRUE(f.zero_evidence);
  EXPECT_EQ(f.representation.norm(), 0.0);
}

TEST(ContextualNet, PairEncodingDependsOnClaim) {
  typename ContextualNet<double>::Shape shape;
  shape.vocab = 12;
  shape.model_dim = 8;
  shape.layers = 1;
  shape.heads = 2;
  shape.ff_dim = 8;
  shape.max_positions = 16;
  shape.labels = 3;
  ContextualNet<double> net(shape, 3);
  const std::vector<std::size_t> claim = {4, 5}, snippet = {6, 7, 8};
  typename TransformerEncoder<double>::Cache c1, c2;
  const Vecd pair = net.encode_cls(claim, &snippet, c1);
  const Vecd alone = net.encode_cls(snippet, nullptr, c2);
  EXPECT_GT((pair - alone).norm(), 1e-6);
}

TEST(Adam, ZeroLearningRateLeavesParametersUnchanged) {
  typename RecurrentNet<double>::Shape shape{20, 4, 3, 1, 3, InputRegime::ClaimPlusEvidence, 0.0, false};
  RecurrentNet<double> net(shape, 2);
  const auto before = parameters_to_json(net).dump();
  Rng rng(5);
  const auto ex = toy_example(rng, 20);
  zero_grad(net);
  net.accumulate(ex, 1, nullptr);
  Adam<double> opt(0.0);
  opt.step(net);
  EXPECT_EQ(parameters_to_json(net).dump(), before);
  Adam<double> moving(1e-2);
  moving.step(net);
  EXPECT_NE(parameters_to_json(net).dump(), before);
}

TEST(Parameters, JsonRoundTrip) {
  typename RecurrentNet<double>::Shape shape{20, 4, 3, 2, 3, InputRegime::EvidenceOnly, 0.0, true};
  RecurrentNet<double> a(shape, 1), b(shape, 2);
  const auto j = parameters_to_json(a);
  parameters_from_json(b, nlohmann::json::parse(j.dump()));
  EXPECT_EQ(parameters_to_json(b), j);
  auto broken = j;
  broken.erase("classifier.bias");
  EXPECT_THROW(parameters_from_json(b, broken), DataError);
}

// --------------------------------------------------------------------------
// Training loop.

namespace {

// Label is carried by one token of the claim.
void toy_task(std::size_t n, std::uint64_t seed, std::vector<SequenceExample>& xs, std::vector<std::size_t>& ys) {
  Rng rng(seed);
  xs.clear();
  ys.clear();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = uniform_index(rng, 3);
    SequenceExample ex;
    ex.claim = {5 + uniform_index(rng, 10), 2 + label, 5 + uniform_index(rng, 10)};
    ex.snippets.assign(2, std::nullopt);
    xs.push_back(ex);
    ys.push_back(label);
  }
}

TrainConfig toy_config() {
  TrainConfig c;
  c.learning_rate = 5e-2;
  c.batch_size = 8;
  c.patience = 5;
  c.max_epochs = 40;
  c.seed = 3;
  return c;
}

RecurrentNet<double> toy_net() {
  return RecurrentNet<double>({15, 6, 6, 1, 3, InputRegime::ClaimOnly, 0.1, false}, 9);
}

}  // namespace

TEST(Train, LearnsToyTask) {
  std::vector<SequenceExample> tx, vx;
  std::vector<std::size_t> ty, vy;
  toy_task(90, 1, tx, ty);
  toy_task(30, 2, vx, vy);
  auto net = toy_net();
  const auto h = train_network<double>(net, tx, ty, vx, vy, toy_config());
  ASSERT_FALSE(h.epochs.empty());
  EXPECT_GE(h.epochs[h.best_epoch - 1].val_macro_f1, 0.95);
  std::vector<std::size_t> preds;
  for (const auto& x : vx) preds.push_back(net.predict(x));
  EXPECT_EQ(macro_f1(preds, vy, 3), h.epochs[h.best_epoch - 1].val_macro_f1);  // best parameters restored
}

TEST(Train, PatienceZeroRunsOneEpoch) {
  std::vector<SequenceExample> tx, vx;
  std::vector<std::size_t> ty, vy;
  toy_task(30, 1, tx, ty);
  toy_task(10, 2, vx, vy);
  auto net = toy_net();
  auto c = toy_config();
  c.patience = 0;
  EXPECT_EQ(train_network<double>(net, tx, ty, vx, vy, c).epochs.size(), 1u);
}

TEST(Train, SameSeedSameHistory) {
  std::vector<SequenceExample> tx, vx;
  std::vector<std::size_t> ty, vy;
  toy_task(40, 1, tx, ty);
  toy_task(12, 2, vx, vy);
  auto a = toy_net(), b = toy_net();
  auto c = toy_config();
  c.max_epochs = 6;
  const auto ha = train_network<double>(a, tx, ty, vx, vy, c);
  const auto hb = train_network<double>(b, tx, ty, vx, vy, c);
  EXPECT_EQ(ha.epochs, hb.epochs);
  EXPECT_EQ(ha.best_epoch, hb.best_epoch);
  EXPECT_EQ(parameters_to_json(a), parameters_to_json(b));
}

TEST(Train, DivergenceNamesEpochAndBatch) {
  std::vector<SequenceExample> tx, vx;
  std::vector<std::size_t> ty, vy;
  toy_task(20, 1, tx, ty);
  toy_task(5, 2, vx, vy);
  auto net = toy_net();
  net.classifier.weight.value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    train_network<double>(net, tx, ty, vx, vy, toy_config());
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, batch 0"), std::string::npos) << e.what();
  }
}

TEST(TrainConfig, DefaultsAndGrids) {
  const auto r = TrainConfig::recurrent_defaults();
  EXPECT_EQ(r.learning_rate, 5e-4);
  EXPECT_EQ(r.batch_size, 16u);
  EXPECT_EQ(r.lstm_layers, 2u);
  EXPECT_EQ(r.dropout, 0.1);
  EXPECT_EQ(r.hidden_dim, 128u);
  EXPECT_EQ(r.patience, 10u);
  EXPECT_EQ(r.max_epochs, 100u);
  const auto c = TrainConfig::contextual_defaults();
  EXPECT_EQ(c.learning_rate, 3e-6);
  EXPECT_EQ(c.batch_size, 8u);
  EXPECT_EQ(TrainConfig::kRecurrentLearningRates, (std::array<double, 3>{1e-4, 5e-4, 1e-5}));
  EXPECT_EQ(TrainConfig::kContextualLearningRates, (std::array<double, 3>{3e-5, 3e-6, 3e-7}));
  EXPECT_EQ(TrainConfig::from_json(r.to_json()).to_json(), r.to_json());
}
