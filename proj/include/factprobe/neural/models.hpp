#pragma once

// The two neural claim/evidence classifiers. Both read a claim and up to ten
// snippet slots (missing slots are masked) and produce logits over the labels.

#include <optional>
#include <vector>

#include "../prediction.hpp"
#include "layers.hpp"

namespace factprobe::nn {

struct SequenceExample {
  std::vector<std::size_t> claim;
  std::vector<std::optional<std::vector<std::size_t>>> snippets;  // nullopt = masked slot
};

// Attention-pooled BiLSTM encoder shared by claim and snippets. The joint
// regime pools matching vectors [c; e; c - e; c * e] over the snippets.
template <typename S>
class RecurrentNet {
 public:
  struct Shape {
    std::size_t vocab = 0;
    std::size_t embedding_dim = 0;
    std::size_t hidden = 128;
    std::size_t layers = 2;
    std::size_t labels = 0;
    InputRegime regime = InputRegime::ClaimPlusEvidence;
    double dropout = 0.0;
    bool freeze_embeddings = true;
  };

  struct TextCache {
    std::vector<std::size_t> ids;
    typename BiLstm<S>::Cache lstm;
    typename AttnPool<S>::Cache attn;
    bool valid = false;
    Vec<S> pooled;
  };

  struct Forward {
    TextCache claim;
    std::vector<TextCache> snippets;  // encoded, unmasked slots only
    typename AttnPool<S>::Cache snippet_attn;
    Vec<S> representation;
    Vec<S> drop_mask;  // empty when dropout is inactive
    Vec<S> logits;
    bool zero_evidence = false;
  };

  Embedding<S> embedding;
  BiLstm<S> encoder;
  AttnPool<S> token_attention;
  AttnPool<S> snippet_attention;
  Linear<S> classifier;

  RecurrentNet() = default;

  RecurrentNet(const Shape& shape, std::uint64_t seed, const Mat<S>* pretrained = nullptr)
      : embedding(static_cast<Eigen::Index>(shape.vocab), static_cast<Eigen::Index>(shape.embedding_dim),
                  !shape.freeze_embeddings),
        encoder(static_cast<Eigen::Index>(shape.embedding_dim), static_cast<Eigen::Index>(shape.hidden), shape.layers,
                shape.dropout),
        token_attention(2 * static_cast<Eigen::Index>(shape.hidden)),
        shape_(shape) {
    const auto h2 = 2 * static_cast<Eigen::Index>(shape.hidden);
    const Eigen::Index rep = representation_dim();
    if (uses_evidence(shape.regime))
      snippet_attention = AttnPool<S>(shape.regime == InputRegime::ClaimPlusEvidence ? 4 * h2 : h2);
    classifier = Linear<S>(rep, static_cast<Eigen::Index>(shape.labels));
    Rng rng(seed);
    if (pretrained) {
      if (pretrained->rows() != embedding.table.rows() || pretrained->cols() != embedding.table.cols())
        throw std::invalid_argument("pretrained embedding table has the wrong shape");
      embedding.table.value = *pretrained;
    } else {
      embedding.table.init_uniform(rng, S(0.25));
    }
    embedding.table.value.row(0).setZero();
    encoder.init(rng);
    token_attention.init(rng);
    if (uses_evidence(shape.regime)) snippet_attention.init(rng);
    classifier.init(rng);
  }

  const Shape& shape() const { return shape_; }
  std::size_t n_labels() const { return shape_.labels; }
  InputRegime regime() const { return shape_.regime; }
  Eigen::Index hidden2() const { return 2 * static_cast<Eigen::Index>(shape_.hidden); }
  Eigen::Index representation_dim() const {
    return shape_.regime == InputRegime::ClaimPlusEvidence ? 4 * hidden2() : hidden2();
  }

  // Attention-pooled encoding of one text; zero vector (valid = false) when
  // the text has no tokens.
  Vec<S> encode_text(const std::vector<std::size_t>& ids, TextCache& c, Rng* rng) const {
    c.ids = ids;
    const auto seq = bilstm_encode<S>(c.ids, embedding, encoder, c.lstm, rng);
    c.valid = seq.any_unmasked();
    c.pooled = c.valid ? token_attention.forward(seq.states, seq.mask, c.attn) : Vec<S>(Vec<S>::Zero(hidden2()));
    return c.pooled;
  }

  Vec<S> forward(const SequenceExample& ex, Forward& f, Rng* rng = nullptr) const {
    f = Forward{};
    Vec<S> claim;
    if (uses_claim(shape_.regime)) claim = encode_text(ex.claim, f.claim, rng);
    if (shape_.regime == InputRegime::ClaimOnly) {
      f.representation = claim;
    } else {
      std::vector<Vec<S>> columns;
      for (const auto& slot : ex.snippets) {
        if (!slot) continue;
        TextCache c;
        Vec<S> e = encode_text(*slot, c, rng);
        if (!c.valid) continue;
        columns.push_back(shape_.regime == InputRegime::ClaimPlusEvidence ? match_combine<S>(claim, e) : e);
        f.snippets.push_back(std::move(c));
      }
      const Eigen::Index dim = shape_.regime == InputRegime::ClaimPlusEvidence ? 4 * hidden2() : hidden2();
      if (columns.empty()) {
        f.zero_evidence = true;
        f.representation = Vec<S>::Zero(dim);
      } else {
        Mat<S> m(dim, static_cast<Eigen::Index>(columns.size()));
        for (std::size_t k = 0; k < columns.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = columns[k];
        f.representation = snippet_attention.forward(m, f.snippet_attn);
      }
    }
    Vec<S> rep = f.representation;
    if (rng && shape_.dropout > 0) {
      f.drop_mask = dropout_mask<S>(rep.size(), shape_.dropout, *rng);
      rep = rep.cwiseProduct(f.drop_mask);
    }
    f.logits = classifier.forward(rep);
    return f.logits;
  }

  void backward(Forward& f, const Vec<S>& d_logits) {
    Vec<S> rep = f.drop_mask.size() ? Vec<S>(f.representation.cwiseProduct(f.drop_mask)) : f.representation;
    Vec<S> d_rep = classifier.backward(rep, d_logits);
    if (f.drop_mask.size()) d_rep = d_rep.cwiseProduct(f.drop_mask);

    if (shape_.regime == InputRegime::ClaimOnly) {
      backward_text(f.claim, d_rep);
      return;
    }
    Vec<S> d_claim = Vec<S>::Zero(hidden2());
    if (!f.zero_evidence) {
      const Mat<S> d_cols = snippet_attention.backward(f.snippet_attn, d_rep);
      for (std::size_t k = 0; k < f.snippets.size(); ++k) {
        const Vec<S> d_col = d_cols.col(static_cast<Eigen::Index>(k));
        if (shape_.regime == InputRegime::ClaimPlusEvidence) {
          Vec<S> d_e = Vec<S>::Zero(hidden2());
          match_combine_backward<S>(f.claim.pooled, f.snippets[k].pooled, d_col, d_claim, d_e);
          backward_text(f.snippets[k], d_e);
        } else {
          backward_text(f.snippets[k], d_col);
        }
      }
    }
    if (shape_.regime == InputRegime::ClaimPlusEvidence) backward_text(f.claim, d_claim);
  }

  S accumulate(const SequenceExample& ex, std::size_t gold, Rng* rng) {
    Forward f;
    const auto [loss, grad] = softmax_ce<S>(forward(ex, f, rng), gold);
    backward(f, grad);
    return loss;
  }

  std::size_t predict(const SequenceExample& ex) const {
    Forward f;
    Eigen::Index best;
    forward(ex, f).maxCoeff(&best);
    return static_cast<std::size_t>(best);
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    embedding.visit(f, join_name(prefix, "embedding"));
    encoder.visit(f, join_name(prefix, "encoder"));
    token_attention.visit(f, join_name(prefix, "token_attention"));
    if (uses_evidence(shape_.regime)) snippet_attention.visit(f, join_name(prefix, "snippet_attention"));
    classifier.visit(f, join_name(prefix, "classifier"));
  }

 private:
  void backward_text(TextCache& c, const Vec<S>& d_pooled) {
    if (!c.valid) return;
    const Mat<S> d_states = token_attention.backward(c.attn, d_pooled);
    const Mat<S> d_x = encoder.backward(c.lstm, d_states);
    embedding.backward(c.ids, d_x);
  }

  Shape shape_;
};

// Small transformer encoder read through its CLS state. In the joint regime
// each snippet is encoded as the pair (claim, snippet).
template <typename S>
class ContextualNet {
 public:
  struct Shape {
    std::size_t vocab = 0;
    std::size_t model_dim = 128;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ff_dim = 512;
    std::size_t max_positions = 160;
    std::size_t labels = 0;
    std::size_t cls_id = 2;
    std::size_t sep_id = 3;
    InputRegime regime = InputRegime::ClaimPlusEvidence;
    double dropout = 0.0;
  };

  struct Forward {
    std::optional<typename TransformerEncoder<S>::Cache> claim;
    std::vector<typename TransformerEncoder<S>::Cache> snippets;
    Vec<S> claim_cls;
    std::vector<Vec<S>> snippet_cls;
    typename AttnPool<S>::Cache snippet_attn;
    Vec<S> representation;
    Vec<S> drop_mask;
    Vec<S> logits;
    bool zero_evidence = false;
  };

  TransformerEncoder<S> encoder;
  AttnPool<S> snippet_attention;
  Linear<S> classifier;

  ContextualNet() = default;

  ContextualNet(const Shape& shape, std::uint64_t seed)
      : encoder(static_cast<Eigen::Index>(shape.vocab), static_cast<Eigen::Index>(shape.model_dim), shape.layers,
                shape.heads, static_cast<Eigen::Index>(shape.ff_dim), static_cast<Eigen::Index>(shape.max_positions)),
        shape_(shape) {
    if (uses_evidence(shape.regime)) snippet_attention = AttnPool<S>(static_cast<Eigen::Index>(shape.model_dim));
    classifier = Linear<S>(representation_dim(), static_cast<Eigen::Index>(shape.labels));
    Rng rng(seed);
    encoder.init(rng);
    if (uses_evidence(shape.regime)) snippet_attention.init(rng);
    classifier.init(rng);
  }

  const Shape& shape() const { return shape_; }
  std::size_t n_labels() const { return shape_.labels; }
  InputRegime regime() const { return shape_.regime; }
  Eigen::Index dim() const { return static_cast<Eigen::Index>(shape_.model_dim); }
  Eigen::Index representation_dim() const {
    return shape_.regime == InputRegime::ClaimPlusEvidence ? 2 * dim() : dim();
  }

  // CLS state of `a` alone, or of the pair (a, b).
  Vec<S> encode_cls(const std::vector<std::size_t>& a, const std::vector<std::size_t>* b,
                    typename TransformerEncoder<S>::Cache& cache) const {
    std::span<const std::size_t> bs;
    if (b) bs = std::span<const std::size_t>(*b);
    const auto in = encoder.build_input(a, b ? &bs : nullptr, shape_.cls_id, shape_.sep_id);
    return transformer_encode<S>(encoder, in, cache).cls;
  }

  Vec<S> forward(const SequenceExample& ex, Forward& f, Rng* rng = nullptr) const {
    f = Forward{};
    if (uses_claim(shape_.regime)) {
      f.claim.emplace();
      f.claim_cls = encode_cls(ex.claim, nullptr, *f.claim);
    }
    Vec<S> evidence;
    if (uses_evidence(shape_.regime)) {
      for (const auto& slot : ex.snippets) {
        if (!slot || slot->empty()) continue;
        typename TransformerEncoder<S>::Cache c;
        f.snippet_cls.push_back(shape_.regime == InputRegime::ClaimPlusEvidence ? encode_cls(ex.claim, &*slot, c)
                                                                                : encode_cls(*slot, nullptr, c));
        f.snippets.push_back(std::move(c));
      }
      if (f.snippet_cls.empty()) {
        f.zero_evidence = true;
        evidence = Vec<S>::Zero(dim());
      } else {
        Mat<S> m(dim(), static_cast<Eigen::Index>(f.snippet_cls.size()));
        for (std::size_t k = 0; k < f.snippet_cls.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = f.snippet_cls[k];
        evidence = snippet_attention.forward(m, f.snippet_attn);
      }
    }
    switch (shape_.regime) {
      case InputRegime::ClaimOnly: f.representation = f.claim_cls; break;
      case InputRegime::EvidenceOnly: f.representation = evidence; break;
      case InputRegime::ClaimPlusEvidence:
        f.representation.resize(2 * dim());
        f.representation << f.claim_cls, evidence;
        break;
    }
    Vec<S> rep = f.representation;
    if (rng && shape_.dropout > 0) {
      f.drop_mask = dropout_mask<S>(rep.size(), shape_.dropout, *rng);
      rep = rep.cwiseProduct(f.drop_mask);
    }
    f.logits = classifier.forward(rep);
    return f.logits;
  }

  void backward(Forward& f, const Vec<S>& d_logits) {
    Vec<S> rep = f.drop_mask.size() ? Vec<S>(f.representation.cwiseProduct(f.drop_mask)) : f.representation;
    Vec<S> d_rep = classifier.backward(rep, d_logits);
    if (f.drop_mask.size()) d_rep = d_rep.cwiseProduct(f.drop_mask);

    Vec<S> d_claim, d_evidence;
    switch (shape_.regime) {
      case InputRegime::ClaimOnly: d_claim = d_rep; break;
      case InputRegime::EvidenceOnly: d_evidence = d_rep; break;
      case InputRegime::ClaimPlusEvidence:
        d_claim = d_rep.head(dim());
        d_evidence = d_rep.tail(dim());
        break;
    }
    if (d_evidence.size() && !f.zero_evidence) {
      const Mat<S> d_cols = snippet_attention.backward(f.snippet_attn, d_evidence);
      for (std::size_t k = 0; k < f.snippets.size(); ++k) backward_cls(f.snippets[k], d_cols.col(static_cast<Eigen::Index>(k)));
    }
    if (d_claim.size()) backward_cls(*f.claim, d_claim);
  }

  S accumulate(const SequenceExample& ex, std::size_t gold, Rng* rng) {
    Forward f;
    const auto [loss, grad] = softmax_ce<S>(forward(ex, f, rng), gold);
    backward(f, grad);
    return loss;
  }

  std::size_t predict(const SequenceExample& ex) const {
    Forward f;
    Eigen::Index best;
    forward(ex, f).maxCoeff(&best);
    return static_cast<std::size_t>(best);
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    encoder.visit(f, join_name(prefix, "encoder"));
    if (uses_evidence(shape_.regime)) snippet_attention.visit(f, join_name(prefix, "snippet_attention"));
    classifier.visit(f, join_name(prefix, "classifier"));
  }

 private:
  void backward_cls(const typename TransformerEncoder<S>::Cache& cache, const Vec<S>& d_cls) {
    Mat<S> d = Mat<S>::Zero(dim(), static_cast<Eigen::Index>(cache.input.ids.size()));
    d.col(0) = d_cls;
    encoder.backward(cache, d);
  }

  Shape shape_;
};

}  // namespace factprobe::nn
