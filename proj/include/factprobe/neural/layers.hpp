#pragma once

// Differentiable building blocks with explicit backward passes. Sequences are
// stored column-wise: an input of T positions with d features is a d x T
// matrix. Every backward() accumulates into Parameter::grad.

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "tensor.hpp"

namespace factprobe::nn {

template <typename S>
struct Linear {
  Parameter<S> weight;  // out x in
  Parameter<S> bias;    // out x 1

  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out) : weight(out, in), bias(out, 1) {}

  void init(Rng& rng) {
    weight.init_uniform(rng);
    bias.value.setZero();
  }

  Mat<S> forward(const Mat<S>& x) const {
    Mat<S> y = weight.value * x;
    y.colwise() += bias.value.col(0);
    return y;
  }

  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy) {
    weight.grad.noalias() += dy * x.transpose();
    bias.grad.col(0) += dy.rowwise().sum();
    return weight.value.transpose() * dy;
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(join_name(prefix, "weight"), weight);
    f(join_name(prefix, "bias"), bias);
  }
};

// Lookup table, rows are token vectors. The PAD row (index 0) stays zero.
template <typename S>
struct Embedding {
  Parameter<S> table;  // |V| x d

  Embedding() = default;
  Embedding(Eigen::Index vocab, Eigen::Index dim, bool trainable = true) : table(vocab, dim) {
    table.trainable = trainable;
    if (!trainable) table.grad.resize(0, 0);
  }

  Eigen::Index dim() const { return table.cols(); }

  Mat<S> forward(std::span<const std::size_t> ids) const {
    Mat<S> x(table.cols(), static_cast<Eigen::Index>(ids.size()));
    for (std::size_t t = 0; t < ids.size(); ++t) {
      if (ids[t] >= static_cast<std::size_t>(table.rows())) throw std::out_of_range("token index outside vocabulary");
      x.col(static_cast<Eigen::Index>(t)) = table.value.row(static_cast<Eigen::Index>(ids[t])).transpose();
    }
    return x;
  }

  void backward(std::span<const std::size_t> ids, const Mat<S>& dx) {
    if (!table.trainable) return;
    for (std::size_t t = 0; t < ids.size(); ++t)
      if (ids[t] != 0) table.grad.row(static_cast<Eigen::Index>(ids[t])) += dx.col(static_cast<Eigen::Index>(t)).transpose();
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(join_name(prefix, "table"), table);
  }
};

// One LSTM direction. Gate rows are ordered input, forget, cell, output.
template <typename S>
struct LstmCell {
  Parameter<S> w_input;      // 4h x in
  Parameter<S> w_recurrent;  // 4h x h
  Parameter<S> bias;         // 4h x 1

  struct Cache {
    Mat<S> x;
    Mat<S> gates;  // activated gates, 4h x T
    Mat<S> cells;  // h x T
    Mat<S> hidden; // h x T
    bool reverse = false;
  };

  LstmCell() = default;
  LstmCell(Eigen::Index in, Eigen::Index hidden) : w_input(4 * hidden, in), w_recurrent(4 * hidden, hidden), bias(4 * hidden, 1) {}

  Eigen::Index hidden_dim() const { return w_recurrent.cols(); }

  void init(Rng& rng) {
    w_input.init_uniform(rng);
    w_recurrent.init_uniform(rng);
    bias.value.setZero();
    bias.value.block(hidden_dim(), 0, hidden_dim(), 1).setOnes();
  }

  Mat<S> forward(const Mat<S>& x, bool reverse, Cache& cache) const {
    const Eigen::Index h = hidden_dim();
    const Eigen::Index T = x.cols();
    Mat<S> z_in = w_input.value * x;
    z_in.colwise() += bias.value.col(0);
    cache.x = x;
    cache.reverse = reverse;
    cache.gates.resize(4 * h, T);
    cache.cells.resize(h, T);
    cache.hidden.resize(h, T);
    Vec<S> h_prev = Vec<S>::Zero(h), c_prev = Vec<S>::Zero(h);
    for (Eigen::Index step = 0; step < T; ++step) {
      const Eigen::Index t = reverse ? T - 1 - step : step;
      Vec<S> z = z_in.col(t) + w_recurrent.value * h_prev;
      for (Eigen::Index k = 0; k < h; ++k) {
        z(k) = sigmoid(z(k));
        z(h + k) = sigmoid(z(h + k));
        z(2 * h + k) = std::tanh(z(2 * h + k));
        z(3 * h + k) = sigmoid(z(3 * h + k));
      }
      Vec<S> c = z.segment(h, h).cwiseProduct(c_prev) + z.segment(0, h).cwiseProduct(z.segment(2 * h, h));
      Vec<S> hh = z.segment(3 * h, h).cwiseProduct(c.array().tanh().matrix());
      cache.gates.col(t) = z;
      cache.cells.col(t) = c;
      cache.hidden.col(t) = hh;
      h_prev = hh;
      c_prev = c;
    }
    return cache.hidden;
  }

  Mat<S> backward(const Cache& cache, const Mat<S>& d_hidden) {
    const Eigen::Index h = hidden_dim();
    const Eigen::Index T = cache.x.cols();
    Mat<S> dz_all(4 * h, T);
    Vec<S> dh_next = Vec<S>::Zero(h), dc_next = Vec<S>::Zero(h);
    for (Eigen::Index step = T - 1; step >= 0; --step) {
      const Eigen::Index t = cache.reverse ? T - 1 - step : step;
      const Eigen::Index tp = cache.reverse ? t + 1 : t - 1;  // previous position in processing order
      const bool has_prev = step > 0;
      const auto g = cache.gates.col(t);
      const auto i_g = g.segment(0, h), f_g = g.segment(h, h), c_g = g.segment(2 * h, h), o_g = g.segment(3 * h, h);
      Vec<S> c_prev = has_prev ? Vec<S>(cache.cells.col(tp)) : Vec<S>::Zero(h);
      Vec<S> h_prev = has_prev ? Vec<S>(cache.hidden.col(tp)) : Vec<S>::Zero(h);
      Vec<S> tc = cache.cells.col(t).array().tanh().matrix();

      Vec<S> dh = d_hidden.col(t) + dh_next;
      Vec<S> dc = dh.cwiseProduct(o_g).cwiseProduct((S(1) - tc.array().square()).matrix()) + dc_next;
      Vec<S> dz(4 * h);
      dz.segment(0, h) = dc.cwiseProduct(c_g).cwiseProduct(i_g.cwiseProduct((S(1) - i_g.array()).matrix()));
      dz.segment(h, h) = dc.cwiseProduct(c_prev).cwiseProduct(f_g.cwiseProduct((S(1) - f_g.array()).matrix()));
      dz.segment(2 * h, h) = dc.cwiseProduct(i_g).cwiseProduct((S(1) - c_g.array().square()).matrix());
      dz.segment(3 * h, h) = dh.cwiseProduct(tc).cwiseProduct(o_g.cwiseProduct((S(1) - o_g.array()).matrix()));
      dz_all.col(t) = dz;
      if (has_prev) w_recurrent.grad.noalias() += dz * h_prev.transpose();
      dh_next = w_recurrent.value.transpose() * dz;
      dc_next = dc.cwiseProduct(f_g);
    }
    w_input.grad.noalias() += dz_all * cache.x.transpose();
    bias.grad.col(0) += dz_all.rowwise().sum();
    return w_input.value.transpose() * dz_all;
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(join_name(prefix, "w_input"), w_input);
    f(join_name(prefix, "w_recurrent"), w_recurrent);
    f(join_name(prefix, "bias"), bias);
  }
};

// Per-token hidden states plus a mask (true = real token).
template <typename S>
struct EncodedSequence {
  Mat<S> states;
  std::vector<bool> mask;

  bool any_unmasked() const {
    for (bool m : mask)
      if (m) return true;
    return false;
  }
};

// Stacked bidirectional LSTM; layer outputs are [forward; backward] (2h rows).
template <typename S>
struct BiLstm {
  struct Layer {
    LstmCell<S> fwd, bwd;
  };
  std::vector<Layer> layers;
  double dropout = 0.0;  // between stacked layers

  struct Cache {
    std::vector<typename LstmCell<S>::Cache> fwd, bwd;
    std::vector<Vec<S>> drop_masks;  // per layer boundary, empty when inactive
    bool empty_input = false;
  };

  BiLstm() = default;
  BiLstm(Eigen::Index in, Eigen::Index hidden, std::size_t n_layers, double dropout_rate = 0.0) : dropout(dropout_rate) {
    for (std::size_t l = 0; l < n_layers; ++l) {
      const Eigen::Index layer_in = l == 0 ? in : 2 * hidden;
      layers.push_back({LstmCell<S>(layer_in, hidden), LstmCell<S>(layer_in, hidden)});
    }
  }

  Eigen::Index output_dim() const { return 2 * layers.front().fwd.hidden_dim(); }

  void init(Rng& rng) {
    for (auto& l : layers) {
      l.fwd.init(rng);
      l.bwd.init(rng);
    }
  }

  // `rng` non-null enables dropout (training mode).
  Mat<S> forward(const Mat<S>& x, Cache& cache, Rng* rng = nullptr) const {
    cache.fwd.resize(layers.size());
    cache.bwd.resize(layers.size());
    cache.drop_masks.assign(layers.size(), Vec<S>());
    Mat<S> input = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (l > 0 && rng && dropout > 0) {
        cache.drop_masks[l] = dropout_mask<S>(input.rows(), dropout, *rng);
        input = cache.drop_masks[l].asDiagonal() * input;
      }
      const Mat<S> hf = layers[l].fwd.forward(input, false, cache.fwd[l]);
      const Mat<S> hb = layers[l].bwd.forward(input, true, cache.bwd[l]);
      Mat<S> out(hf.rows() + hb.rows(), hf.cols());
      out << hf, hb;
      input = std::move(out);
    }
    return input;
  }

  Mat<S> backward(const Cache& cache, const Mat<S>& d_out) {
    Mat<S> d = d_out;
    for (std::size_t l = layers.size(); l-- > 0;) {
      const Eigen::Index h = layers[l].fwd.hidden_dim();
      Mat<S> dx = layers[l].fwd.backward(cache.fwd[l], d.topRows(h));
      dx += layers[l].bwd.backward(cache.bwd[l], d.bottomRows(h));
      if (cache.drop_masks[l].size() > 0) dx = cache.drop_masks[l].asDiagonal() * dx;
      d = std::move(dx);
    }
    return d;
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto p = join_name(prefix, "layer" + std::to_string(l));
      layers[l].fwd.visit(f, join_name(p, "fwd"));
      layers[l].bwd.visit(f, join_name(p, "bwd"));
    }
  }
};

// Embeds and encodes token ids. An empty sequence becomes a single masked
// PAD position.
template <typename S>
EncodedSequence<S> bilstm_encode(std::span<const std::size_t> ids, const Embedding<S>& emb, const BiLstm<S>& lstm,
                                 typename BiLstm<S>::Cache& cache, Rng* rng = nullptr) {
  static const std::size_t pad[1] = {0};
  const bool empty = ids.empty();
  if (empty) ids = std::span<const std::size_t>(pad, 1);
  EncodedSequence<S> out;
  out.states = lstm.forward(emb.forward(ids), cache, rng);
  out.mask.assign(ids.size(), !empty);
  cache.empty_input = empty;
  return out;
}

// Softmax attention pooling: score_j = w . v_j + b over unmasked columns,
// output sum_j alpha_j v_j.
template <typename S>
struct AttnPool {
  Parameter<S> w;  // dim x 1
  Parameter<S> b;  // 1 x 1

  struct Cache {
    Mat<S> values;
    std::vector<Eigen::Index> active;
    Vec<S> alpha;  // over active columns
  };

  AttnPool() = default;
  explicit AttnPool(Eigen::Index dim) : w(dim, 1), b(1, 1) {}

  void init(Rng& rng) {
    w.init_uniform(rng);
    b.value.setZero();
  }

  Vec<S> forward(const Mat<S>& values, const std::vector<bool>& mask, Cache& cache) const {
    cache.values = values;
    cache.active.clear();
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      if (mask[static_cast<std::size_t>(j)]) cache.active.push_back(j);
    if (cache.active.empty()) throw std::invalid_argument("attention pooling over an all-masked set");
    const auto n = static_cast<Eigen::Index>(cache.active.size());
    Vec<S> scores(n);
    for (Eigen::Index k = 0; k < n; ++k) scores(k) = w.value.col(0).dot(values.col(cache.active[static_cast<std::size_t>(k)])) + b.value(0, 0);
    const S m = scores.maxCoeff();
    cache.alpha = (scores.array() - m).exp().matrix();
    cache.alpha /= cache.alpha.sum();
    Vec<S> out = Vec<S>::Zero(values.rows());
    for (Eigen::Index k = 0; k < n; ++k) out += cache.alpha(k) * values.col(cache.active[static_cast<std::size_t>(k)]);
    return out;
  }

  Vec<S> forward(const Mat<S>& values, Cache& cache) const {
    return forward(values, std::vector<bool>(static_cast<std::size_t>(values.cols()), true), cache);
  }

  Mat<S> backward(const Cache& cache, const Vec<S>& d_out) {
    const auto n = static_cast<Eigen::Index>(cache.active.size());
    Mat<S> d_values = Mat<S>::Zero(cache.values.rows(), cache.values.cols());
    Vec<S> d_alpha(n);
    for (Eigen::Index k = 0; k < n; ++k) d_alpha(k) = d_out.dot(cache.values.col(cache.active[static_cast<std::size_t>(k)]));
    const S mean = cache.alpha.dot(d_alpha);
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto j = cache.active[static_cast<std::size_t>(k)];
      const S d_score = cache.alpha(k) * (d_alpha(k) - mean);
      d_values.col(j) = cache.alpha(k) * d_out + d_score * w.value.col(0);
      w.grad.col(0) += d_score * cache.values.col(j);
      b.grad(0, 0) += d_score;
    }
    return d_values;
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(join_name(prefix, "w"), w);
    f(join_name(prefix, "b"), b);
  }
};

// [a; b; a - b; a * b]
template <typename S>
Vec<S> match_combine(const Vec<S>& a, const Vec<S>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("match_combine needs equal dimensions");
  const auto h = a.size();
  Vec<S> out(4 * h);
  out << a, b, a - b, a.cwiseProduct(b);
  return out;
}

template <typename S>
void match_combine_backward(const Vec<S>& a, const Vec<S>& b, const Vec<S>& d_out, Vec<S>& d_a, Vec<S>& d_b) {
  const auto h = a.size();
  d_a += d_out.segment(0, h) + d_out.segment(2 * h, h) + d_out.segment(3 * h, h).cwiseProduct(b);
  d_b += d_out.segment(h, h) - d_out.segment(2 * h, h) + d_out.segment(3 * h, h).cwiseProduct(a);
}

template <typename S>
Vec<S> softmax(const Vec<S>& logits) {
  const S m = logits.maxCoeff();
  Vec<S> p = (logits.array() - m).exp().matrix();
  return p / p.sum();
}

template <typename S>
struct LossAndGradient {
  S loss;
  Vec<S> gradient;
};

// Cross-entropy of softmax(logits) against `gold`, via log-sum-exp.
template <typename S>
LossAndGradient<S> softmax_ce(const Vec<S>& logits, std::size_t gold) {
  const S m = logits.maxCoeff();
  const S lse = m + std::log((logits.array() - m).exp().sum());
  LossAndGradient<S> r{lse - logits(static_cast<Eigen::Index>(gold)), softmax(logits)};
  r.gradient(static_cast<Eigen::Index>(gold)) -= S(1);
  return r;
}

// Per-column layer normalization with affine gain and shift.
template <typename S>
struct LayerNorm {
  Parameter<S> gain;   // d x 1
  Parameter<S> shift;  // d x 1
  S eps = S(1e-5);

  struct Cache {
    Mat<S> normalized;
    Vec<S> inv_std;  // per column
  };

  LayerNorm() = default;
  explicit LayerNorm(Eigen::Index d) : gain(d, 1), shift(d, 1) { gain.value.setOnes(); }

  // Normalization without the affine part.
  Mat<S> normalize(const Mat<S>& x, Cache& cache) const {
    const auto d = static_cast<S>(x.rows());
    cache.normalized.resize(x.rows(), x.cols());
    cache.inv_std.resize(x.cols());
    for (Eigen::Index t = 0; t < x.cols(); ++t) {
      const S mean = x.col(t).sum() / d;
      const Vec<S> centered = x.col(t).array() - mean;
      const S var = centered.squaredNorm() / d;
      cache.inv_std(t) = S(1) / std::sqrt(var + eps);
      cache.normalized.col(t) = centered * cache.inv_std(t);
    }
    return cache.normalized;
  }

  Mat<S> forward(const Mat<S>& x, Cache& cache) const {
    Mat<S> y = gain.value.col(0).asDiagonal() * normalize(x, cache);
    y.colwise() += shift.value.col(0);
    return y;
  }

  Mat<S> backward(const Cache& cache, const Mat<S>& dy) {
    gain.grad.col(0) += dy.cwiseProduct(cache.normalized).rowwise().sum();
    shift.grad.col(0) += dy.rowwise().sum();
    const Mat<S> dn = gain.value.col(0).asDiagonal() * dy;
    const auto d = static_cast<S>(dy.rows());
    Mat<S> dx(dy.rows(), dy.cols());
    for (Eigen::Index t = 0; t < dy.cols(); ++t) {
      const S sum = dn.col(t).sum();
      const S dot = dn.col(t).dot(cache.normalized.col(t));
      dx.col(t) = (cache.inv_std(t) / d) * (d * dn.col(t).array() - sum - cache.normalized.col(t).array() * dot).matrix();
    }
    return dx;
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(join_name(prefix, "gain"), gain);
    f(join_name(prefix, "shift"), shift);
  }
};

// Multi-head scaled dot-product self-attention. Masked positions are never
// attended to.
template <typename S>
struct MultiHeadAttention {
  Linear<S> query, key, value, output;
  std::size_t heads = 1;

  struct Cache {
    Mat<S> x, q, k, v, context;
    std::vector<Mat<S>> attention;  // per head, queries x keys
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(Eigen::Index d, std::size_t n_heads)
      : query(d, d), key(d, d), value(d, d), output(d, d), heads(n_heads) {
    if (n_heads == 0 || d % static_cast<Eigen::Index>(n_heads) != 0)
      throw std::invalid_argument("model dimension must be divisible by the number of heads");
  }

  void init(Rng& rng) {
    query.init(rng);
    key.init(rng);
    value.init(rng);
    output.init(rng);
  }

  // Concatenated head outputs before the output projection.
  Mat<S> attend(const Mat<S>& x, const std::vector<bool>& mask, Cache& cache) const {
    const Eigen::Index T = x.cols();
    const Eigen::Index dk = x.rows() / static_cast<Eigen::Index>(heads);
    const S scale = S(1) / std::sqrt(static_cast<S>(dk));
    cache.x = x;
    cache.q = query.forward(x);
    cache.k = key.forward(x);
    cache.v = value.forward(x);
    cache.context.resize(x.rows(), T);
    cache.attention.assign(heads, Mat<S>());
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const Eigen::Index off = static_cast<Eigen::Index>(hd) * dk;
      Mat<S> scores = (cache.q.middleRows(off, dk).transpose() * cache.k.middleRows(off, dk)) * scale;
      for (Eigen::Index qi = 0; qi < T; ++qi) {
        S m = -std::numeric_limits<S>::infinity();
        for (Eigen::Index ki = 0; ki < T; ++ki)
          if (mask[static_cast<std::size_t>(ki)]) m = std::max(m, scores(qi, ki));
        S total = 0;
        for (Eigen::Index ki = 0; ki < T; ++ki) {
          scores(qi, ki) = mask[static_cast<std::size_t>(ki)] ? std::exp(scores(qi, ki) - m) : S(0);
          total += scores(qi, ki);
        }
        scores.row(qi) /= total;
      }
      cache.context.middleRows(off, dk) = cache.v.middleRows(off, dk) * scores.transpose();
      cache.attention[hd] = std::move(scores);
    }
    return cache.context;
  }

  Mat<S> forward(const Mat<S>& x, const std::vector<bool>& mask, Cache& cache) const {
    return output.forward(attend(x, mask, cache));
  }

  Mat<S> backward(const Cache& cache, const Mat<S>& dy) {
    const Mat<S> d_context = output.backward(cache.context, dy);
    const Eigen::Index dk = cache.x.rows() / static_cast<Eigen::Index>(heads);
    const S scale = S(1) / std::sqrt(static_cast<S>(dk));
    Mat<S> dq(cache.q.rows(), cache.q.cols()), dkm(cache.k.rows(), cache.k.cols()), dv(cache.v.rows(), cache.v.cols());
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const Eigen::Index off = static_cast<Eigen::Index>(hd) * dk;
      const Mat<S>& a = cache.attention[hd];
      const auto dc = d_context.middleRows(off, dk);
      dv.middleRows(off, dk) = dc * a;
      const Mat<S> da = dc.transpose() * cache.v.middleRows(off, dk);
      Mat<S> ds = a.cwiseProduct(da);
      const Vec<S> row = ds.rowwise().sum();
      ds -= row.asDiagonal() * a;
      dq.middleRows(off, dk) = (cache.k.middleRows(off, dk) * ds.transpose()) * scale;
      dkm.middleRows(off, dk) = (cache.q.middleRows(off, dk) * ds) * scale;
    }
    Mat<S> dx = query.backward(cache.x, dq);
    dx += key.backward(cache.x, dkm);
    dx += value.backward(cache.x, dv);
    return dx;
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    query.visit(f, join_name(prefix, "query"));
    key.visit(f, join_name(prefix, "key"));
    value.visit(f, join_name(prefix, "value"));
    output.visit(f, join_name(prefix, "output"));
  }
};

// GELU, erf form.
template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x / std::sqrt(S(2))));
}

template <typename S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x / std::sqrt(S(2))));
  const S pdf = std::exp(S(-0.5) * x * x) / std::sqrt(S(2) * S(M_PI));
  return cdf + x * pdf;
}

// Post-norm encoder block: y = LN2(h + FFN(h)), h = LN1(x + MHA(x)).
template <typename S>
struct TransformerBlock {
  MultiHeadAttention<S> attention;
  LayerNorm<S> norm1, norm2;
  Linear<S> ff_in, ff_out;

  struct Cache {
    typename MultiHeadAttention<S>::Cache attn;
    typename LayerNorm<S>::Cache n1, n2;
    Mat<S> h, ff_pre, ff_act;
  };

  TransformerBlock() = default;
  TransformerBlock(Eigen::Index d, std::size_t heads, Eigen::Index ff)
      : attention(d, heads), norm1(d), norm2(d), ff_in(d, ff), ff_out(ff, d) {}

  void init(Rng& rng) {
    attention.init(rng);
    ff_in.init(rng);
    ff_out.init(rng);
  }

  Mat<S> forward(const Mat<S>& x, const std::vector<bool>& mask, Cache& cache) const {
    cache.h = norm1.forward(x + attention.forward(x, mask, cache.attn), cache.n1);
    cache.ff_pre = ff_in.forward(cache.h);
    cache.ff_act = cache.ff_pre.unaryExpr([](S v) { return gelu(v); });
    return norm2.forward(cache.h + ff_out.forward(cache.ff_act), cache.n2);
  }

  Mat<S> backward(const Cache& cache, const Mat<S>& dy) {
    const Mat<S> d_sum2 = norm2.backward(cache.n2, dy);
    Mat<S> d_act = ff_out.backward(cache.ff_act, d_sum2);
    d_act = d_act.cwiseProduct(cache.ff_pre.unaryExpr([](S v) { return gelu_grad(v); }));
    const Mat<S> d_h = d_sum2 + ff_in.backward(cache.h, d_act);
    const Mat<S> d_sum1 = norm1.backward(cache.n1, d_h);
    return d_sum1 + attention.backward(cache.attn, d_sum1);
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    attention.visit(f, join_name(prefix, "attention"));
    norm1.visit(f, join_name(prefix, "norm1"));
    ff_in.visit(f, join_name(prefix, "ff_in"));
    ff_out.visit(f, join_name(prefix, "ff_out"));
    norm2.visit(f, join_name(prefix, "norm2"));
  }
};

// Token + position + segment embeddings followed by a stack of blocks.
template <typename S>
struct TransformerEncoder {
  Embedding<S> tokens;
  Parameter<S> positions;  // max_positions x d
  Parameter<S> segments;   // 2 x d
  std::vector<TransformerBlock<S>> blocks;

  struct Input {
    std::vector<std::size_t> ids;
    std::vector<std::size_t> segments;
  };

  struct Cache {
    Input input;
    std::vector<typename TransformerBlock<S>::Cache> blocks;
  };

  TransformerEncoder() = default;
  TransformerEncoder(Eigen::Index vocab, Eigen::Index d, std::size_t n_layers, std::size_t heads, Eigen::Index ff,
                     Eigen::Index max_positions)
      : tokens(vocab, d), positions(max_positions, d), segments(2, d) {
    for (std::size_t l = 0; l < n_layers; ++l) blocks.emplace_back(d, heads, ff);
  }

  Eigen::Index dim() const { return tokens.dim(); }
  std::size_t max_positions() const { return static_cast<std::size_t>(positions.rows()); }

  void init(Rng& rng) {
    tokens.table.init_uniform(rng, S(0.1));
    tokens.table.value.row(0).setZero();
    positions.init_uniform(rng, S(0.1));
    segments.init_uniform(rng, S(0.1));
    for (auto& b : blocks) b.init(rng);
  }

  // CLS a SEP, or CLS a SEP b SEP when `b` is given. Over-long inputs lose
  // tokens from the end of b first, then from the end of a.
  Input build_input(std::span<const std::size_t> a, const std::span<const std::size_t>* b, std::size_t cls,
                    std::size_t sep) const {
    const std::size_t limit = max_positions();
    const std::size_t specials = b ? 3 : 2;
    if (limit < specials) throw std::invalid_argument("positional table too small");
    std::size_t len_a = a.size(), len_b = b ? b->size() : 0;
    while (len_a + len_b + specials > limit) {
      if (len_b > 0) --len_b;
      else --len_a;
    }
    Input in;
    in.ids.push_back(cls);
    in.ids.insert(in.ids.end(), a.begin(), a.begin() + static_cast<std::ptrdiff_t>(len_a));
    in.ids.push_back(sep);
    in.segments.assign(in.ids.size(), 0);
    if (b) {
      in.ids.insert(in.ids.end(), b->begin(), b->begin() + static_cast<std::ptrdiff_t>(len_b));
      in.ids.push_back(sep);
      in.segments.resize(in.ids.size(), 1);
    }
    return in;
  }

  Mat<S> forward(const Input& in, Cache& cache) const {
    cache.input = in;
    Mat<S> x = tokens.forward(in.ids);
    for (std::size_t t = 0; t < in.ids.size(); ++t) {
      x.col(static_cast<Eigen::Index>(t)) += positions.value.row(static_cast<Eigen::Index>(t)).transpose() +
                                             segments.value.row(static_cast<Eigen::Index>(in.segments[t])).transpose();
    }
    const std::vector<bool> mask(in.ids.size(), true);
    cache.blocks.resize(blocks.size());
    for (std::size_t l = 0; l < blocks.size(); ++l) x = blocks[l].forward(x, mask, cache.blocks[l]);
    return x;
  }

  void backward(const Cache& cache, const Mat<S>& dy) {
    Mat<S> d = dy;
    for (std::size_t l = blocks.size(); l-- > 0;) d = blocks[l].backward(cache.blocks[l], d);
    tokens.backward(cache.input.ids, d);
    for (std::size_t t = 0; t < cache.input.ids.size(); ++t) {
      positions.grad.row(static_cast<Eigen::Index>(t)) += d.col(static_cast<Eigen::Index>(t)).transpose();
      segments.grad.row(static_cast<Eigen::Index>(cache.input.segments[t])) += d.col(static_cast<Eigen::Index>(t)).transpose();
    }
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    tokens.visit(f, join_name(prefix, "tokens"));
    f(join_name(prefix, "positions"), positions);
    f(join_name(prefix, "segments"), segments);
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].visit(f, join_name(prefix, "block" + std::to_string(l)));
  }
};

// Per-token states and the CLS (first position) state.
template <typename S>
struct ContextualEncoding {
  EncodedSequence<S> sequence;
  Vec<S> cls;
};

template <typename S>
ContextualEncoding<S> transformer_encode(const TransformerEncoder<S>& enc, const typename TransformerEncoder<S>::Input& in,
                                         typename TransformerEncoder<S>::Cache& cache) {
  ContextualEncoding<S> out;
  out.sequence.states = enc.forward(in, cache);
  out.sequence.mask.assign(in.ids.size(), true);
  out.cls = out.sequence.states.col(0);
  return out;
}

}  // namespace factprobe::nn
