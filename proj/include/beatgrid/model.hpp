#pragma once

// Compact encoder-decoder transformer, trained from scratch on CPU.
// Pre-norm residual blocks, RMS layer norms (gain only, no biases), shared
// input/output embedding, T5-style bucketed relative-position bias on the
// self-attention of encoder and decoder (one table each, shared across
// layers), ReLU feed-forward. Templated on the scalar so training runs in
// float and gradient checks in double.

#include <Eigen/Core>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "beatgrid/codec.hpp"
#include "beatgrid/common.hpp"

namespace beatgrid::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

struct ModelConfig {
  int d_model = 128;
  int d_ff = 1024;
  int num_layers = 3;  // encoder and decoder each
  int num_heads = 4;
  int vocab_size = 0;
  int max_input_len = 2048;
  int max_target_len = 256;
  double dropout = 0.1;
  int rel_pos_buckets = 32;
  int rel_pos_max_distance = 128;

  int head_dim() const { return d_model / num_heads; }
  void validate() const {
    require(d_model > 0 && d_ff > 0 && num_layers > 0 && num_heads > 0, Errc::invalid_config,
            "model dimensions must be positive");
    require(d_model % num_heads == 0, Errc::invalid_config, "d_model not divisible by num_heads");
    require(vocab_size > 4, Errc::invalid_config, "vocab_size must cover the reserved ids");
    require(rel_pos_buckets >= 4 && rel_pos_buckets % 2 == 0, Errc::invalid_config,
            "rel_pos_buckets must be even and >= 4");
    require(dropout >= 0.0 && dropout < 1.0, Errc::invalid_config, "dropout outside [0, 1)");
    require(max_input_len > 0 && max_target_len > 1, Errc::invalid_config, "bad length limits");
  }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct AttentionWeights {
  Mat<T> wq, wk, wv, wo;  // each (d_model, d_model)
};

template <typename T>
struct RmsNorm {
  Mat<T> gain;  // (d_model, 1)
};

template <typename T>
struct FeedForward {
  Mat<T> w1;  // (d_model, d_ff)
  Mat<T> w2;  // (d_ff, d_model)
};

template <typename T>
struct EncoderLayer {
  RmsNorm<T> ln1;
  AttentionWeights<T> attn;
  RmsNorm<T> ln2;
  FeedForward<T> ffn;
};

template <typename T>
struct DecoderLayer {
  RmsNorm<T> ln1;
  AttentionWeights<T> self_attn;
  RmsNorm<T> ln2;
  AttentionWeights<T> cross_attn;
  RmsNorm<T> ln3;
  FeedForward<T> ffn;
};

template <typename T>
struct ModelParamsT {
  ModelConfig config;
  Mat<T> embedding;     // (vocab, d_model), shared with the output projection
  Mat<T> enc_rel_bias;  // (buckets, heads)
  Mat<T> dec_rel_bias;  // (buckets, heads)
  std::vector<EncoderLayer<T>> encoder;
  std::vector<DecoderLayer<T>> decoder;
  RmsNorm<T> enc_norm;
  RmsNorm<T> dec_norm;
};

using ModelParams = ModelParamsT<float>;

// Walks every tensor in a stable order; the single source of truth for
// initialization, optimizers, checkpoints, and the parameter-count oracle.
template <typename T, typename F>
void visit_tensors(ModelParamsT<T>& p, F&& f) {
  f("embedding", p.embedding);
  f("enc.rel_bias", p.enc_rel_bias);
  f("dec.rel_bias", p.dec_rel_bias);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    const std::string b = "enc." + std::to_string(i) + ".";
    auto& l = p.encoder[i];
    f(b + "ln1.gain", l.ln1.gain);
    f(b + "attn.wq", l.attn.wq);
    f(b + "attn.wk", l.attn.wk);
    f(b + "attn.wv", l.attn.wv);
    f(b + "attn.wo", l.attn.wo);
    f(b + "ln2.gain", l.ln2.gain);
    f(b + "ffn.w1", l.ffn.w1);
    f(b + "ffn.w2", l.ffn.w2);
  }
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    const std::string b = "dec." + std::to_string(i) + ".";
    auto& l = p.decoder[i];
    f(b + "ln1.gain", l.ln1.gain);
    f(b + "self.wq", l.self_attn.wq);
    f(b + "self.wk", l.self_attn.wk);
    f(b + "self.wv", l.self_attn.wv);
    f(b + "self.wo", l.self_attn.wo);
    f(b + "ln2.gain", l.ln2.gain);
    f(b + "cross.wq", l.cross_attn.wq);
    f(b + "cross.wk", l.cross_attn.wk);
    f(b + "cross.wv", l.cross_attn.wv);
    f(b + "cross.wo", l.cross_attn.wo);
    f(b + "ln3.gain", l.ln3.gain);
    f(b + "ffn.w1", l.ffn.w1);
    f(b + "ffn.w2", l.ffn.w2);
  }
  f("enc_norm.gain", p.enc_norm.gain);
  f("dec_norm.gain", p.dec_norm.gain);
}

template <typename T, typename F>
void visit_tensors(const ModelParamsT<T>& p, F&& f) {
  visit_tensors(const_cast<ModelParamsT<T>&>(p),
                [&](const std::string& name, Mat<T>& m) { f(name, const_cast<const Mat<T>&>(m)); });
}

template <typename T>
std::size_t parameter_count(const ModelParamsT<T>& p) {
  std::size_t n = 0;
  visit_tensors(p, [&](const std::string&, const Mat<T>& m) { n += m.size(); });
  return n;
}

namespace detail {

template <typename T>
void allocate(ModelParamsT<T>& p) {
  const auto& c = p.config;
  p.embedding.resize(c.vocab_size, c.d_model);
  p.enc_rel_bias.resize(c.rel_pos_buckets, c.num_heads);
  p.dec_rel_bias.resize(c.rel_pos_buckets, c.num_heads);
  auto alloc_attn = [&](AttentionWeights<T>& a) {
    a.wq.resize(c.d_model, c.d_model);
    a.wk.resize(c.d_model, c.d_model);
    a.wv.resize(c.d_model, c.d_model);
    a.wo.resize(c.d_model, c.d_model);
  };
  auto alloc_norm = [&](RmsNorm<T>& n) { n.gain.resize(c.d_model, 1); };
  auto alloc_ffn = [&](FeedForward<T>& f) {
    f.w1.resize(c.d_model, c.d_ff);
    f.w2.resize(c.d_ff, c.d_model);
  };
  p.encoder.resize(c.num_layers);
  for (auto& l : p.encoder) {
    alloc_norm(l.ln1);
    alloc_attn(l.attn);
    alloc_norm(l.ln2);
    alloc_ffn(l.ffn);
  }
  p.decoder.resize(c.num_layers);
  for (auto& l : p.decoder) {
    alloc_norm(l.ln1);
    alloc_attn(l.self_attn);
    alloc_norm(l.ln2);
    alloc_attn(l.cross_attn);
    alloc_norm(l.ln3);
    alloc_ffn(l.ffn);
  }
  alloc_norm(p.enc_norm);
  alloc_norm(p.dec_norm);
}

}  // namespace detail

// Deterministic init: embeddings and projections ~ N(0, 1/d_model), norm
// gains 1, relative-position tables 0.
template <typename T = float>
ModelParamsT<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParamsT<T> p;
  p.config = cfg;
  detail::allocate(p);
  Rng rng(seed);
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  visit_tensors(p, [&](const std::string& name, Mat<T>& m) {
    if (name.ends_with("gain")) {
      m.setOnes();
    } else if (name.ends_with("rel_bias")) {
      m.setZero();
    } else {
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
          m(r, c) = static_cast<T>(normal_draw(rng) * std_dev);
    }
  });
  return p;
}

template <typename T>
ModelParamsT<T> zeros_like(const ModelParamsT<T>& p) {
  ModelParamsT<T> g;
  g.config = p.config;
  detail::allocate(g);
  visit_tensors(g, [](const std::string&, Mat<T>& m) { m.setZero(); });
  return g;
}

// T5 relative-position bucketing. rel = key_pos - query_pos; half the
// buckets cover exact small offsets, the rest grow logarithmically up to
// max_distance.
inline int rel_pos_bucket(int query_pos, int key_pos, int num_buckets, int max_distance,
                          bool bidirectional) {
  const int rel = key_pos - query_pos;
  int bucket = 0;
  int nb = num_buckets;
  int n;
  if (bidirectional) {
    nb /= 2;
    if (rel > 0) bucket += nb;
    n = std::abs(rel);
  } else {
    n = std::max(-rel, 0);
  }
  const int max_exact = nb / 2;
  if (n < max_exact) return bucket + n;
  const int log_bucket =
      max_exact + static_cast<int>(std::log(static_cast<double>(n) / max_exact) /
                                   std::log(static_cast<double>(max_distance) / max_exact) *
                                   (nb - max_exact));
  return bucket + std::min(log_bucket, nb - 1);
}

namespace detail {

constexpr double kNormEps = 1e-6;
constexpr double kMaskValue = -1e9;

// In-place row-wise softmax with max subtraction.
template <typename T>
void softmax_rows(Mat<T>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const T mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    const T sum = m.row(i).sum();
    m.row(i) /= sum;
  }
}

template <typename T>
struct NormCache {
  Mat<T> x;        // input
  Vec<T> inv_rms;  // per row
  Mat<T> y;        // output
};

template <typename T>
void rmsnorm_forward(const RmsNorm<T>& w, const Mat<T>& x, NormCache<T>& cache) {
  const auto d = static_cast<T>(x.cols());
  cache.x = x;
  cache.inv_rms.resize(x.rows());
  cache.y.resize(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const T ms = x.row(i).squaredNorm() / d;
    const T r = T(1) / std::sqrt(ms + static_cast<T>(kNormEps));
    cache.inv_rms(i) = r;
    cache.y.row(i) = (x.row(i) * r).cwiseProduct(w.gain.transpose());
  }
}

// dx = r*(dy.g) - x * r^3/d * <dy.g, x> per row; accumulates dgain.
template <typename T>
Mat<T> rmsnorm_backward(const RmsNorm<T>& w, const NormCache<T>& cache, const Mat<T>& dy,
                        Mat<T>& dgain) {
  const auto d = static_cast<T>(cache.x.cols());
  Mat<T> dx(cache.x.rows(), cache.x.cols());
  for (Eigen::Index i = 0; i < cache.x.rows(); ++i) {
    const T r = cache.inv_rms(i);
    auto u = dy.row(i).cwiseProduct(w.gain.transpose());  // dL/d(normalized*gain without gain)
    dgain.col(0) += (dy.row(i).cwiseProduct(cache.x.row(i)) * r).transpose();
    const T dot = u.cwiseProduct(cache.x.row(i)).sum();
    dx.row(i) = u * r - cache.x.row(i) * (r * r * r * dot / d);
  }
  return dx;
}

template <typename T>
struct AttnCache {
  Mat<T> xq, xkv;            // inputs
  Mat<T> q, k, v;            // projections
  std::vector<Mat<T>> probs; // per-head softmax (Lq, Lk)
  Mat<T> ctx;                // concatenated head outputs before wo
};

// bias_table: (buckets, heads) or nullptr (cross-attention has none).
template <typename T>
Mat<T> attention_forward(const AttentionWeights<T>& w, const Mat<T>& xq, const Mat<T>& xkv,
                         int num_heads, const Mat<T>* bias_table, int num_buckets, int max_distance,
                         bool bidirectional, bool causal, AttnCache<T>& cache) {
  const Eigen::Index lq = xq.rows(), lk = xkv.rows();
  const Eigen::Index dh = xq.cols() / num_heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  cache.xq = xq;
  cache.xkv = xkv;
  cache.q.noalias() = xq * w.wq;
  cache.k.noalias() = xkv * w.wk;
  cache.v.noalias() = xkv * w.wv;
  cache.probs.assign(static_cast<std::size_t>(num_heads), Mat<T>());
  cache.ctx.resize(lq, xq.cols());
  for (int h = 0; h < num_heads; ++h) {
    auto qh = cache.q.middleCols(h * dh, dh);
    auto kh = cache.k.middleCols(h * dh, dh);
    auto vh = cache.v.middleCols(h * dh, dh);
    Mat<T> scores(lq, lk);
    scores.noalias() = qh * kh.transpose();
    scores *= scale;
    if (bias_table) {
      for (Eigen::Index i = 0; i < lq; ++i)
        for (Eigen::Index j = 0; j < lk; ++j)
          scores(i, j) += (*bias_table)(
              rel_pos_bucket(static_cast<int>(i), static_cast<int>(j), num_buckets, max_distance,
                             bidirectional),
              h);
    }
    if (causal) {
      for (Eigen::Index i = 0; i < lq; ++i)
        for (Eigen::Index j = i + 1; j < lk; ++j) scores(i, j) = static_cast<T>(kMaskValue);
    }
    softmax_rows(scores);
    cache.probs[static_cast<std::size_t>(h)] = scores;
    cache.ctx.middleCols(h * dh, dh).noalias() = scores * vh;
  }
  return cache.ctx * w.wo;
}

template <typename T>
struct AttnGrads {
  Mat<T>*dwq, *dwk, *dwv, *dwo;
  Mat<T>* dbias_table;  // nullptr when attention has no positional bias
};

// Returns (dxq, dxkv) and accumulates weight gradients.
template <typename T>
std::pair<Mat<T>, Mat<T>> attention_backward(const AttentionWeights<T>& w, const AttnCache<T>& cache,
                                             const Mat<T>& dout, int num_heads, int num_buckets,
                                             int max_distance, bool bidirectional,
                                             const AttnGrads<T>& g) {
  const Eigen::Index lq = cache.xq.rows(), lk = cache.xkv.rows();
  const Eigen::Index dh = cache.xq.cols() / num_heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  g.dwo->noalias() += cache.ctx.transpose() * dout;
  Mat<T> dctx = dout * w.wo.transpose();

  Mat<T> dq(lq, cache.xq.cols()), dk(lk, cache.xkv.cols()), dv(lk, cache.xkv.cols());
  for (int h = 0; h < num_heads; ++h) {
    const auto& probs = cache.probs[static_cast<std::size_t>(h)];
    auto kh = cache.k.middleCols(h * dh, dh);
    auto vh = cache.v.middleCols(h * dh, dh);
    auto qh = cache.q.middleCols(h * dh, dh);
    auto dctx_h = dctx.middleCols(h * dh, dh);

    Mat<T> dprobs(lq, lk);
    dprobs.noalias() = dctx_h * vh.transpose();
    dv.middleCols(h * dh, dh).noalias() = probs.transpose() * dctx_h;

    // softmax backward: dS = P .* (dP - rowsum(P .* dP))
    Mat<T> dscores(lq, lk);
    for (Eigen::Index i = 0; i < lq; ++i) {
      const T dot = probs.row(i).cwiseProduct(dprobs.row(i)).sum();
      dscores.row(i) = probs.row(i).cwiseProduct((dprobs.row(i).array() - dot).matrix());
    }
    if (g.dbias_table) {
      for (Eigen::Index i = 0; i < lq; ++i)
        for (Eigen::Index j = 0; j < lk; ++j)
          (*g.dbias_table)(rel_pos_bucket(static_cast<int>(i), static_cast<int>(j), num_buckets,
                                          max_distance, bidirectional),
                           h) += dscores(i, j);
    }
    dq.middleCols(h * dh, dh).noalias() = dscores * kh * scale;
    dk.middleCols(h * dh, dh).noalias() = dscores.transpose() * qh * scale;
  }
  g.dwq->noalias() += cache.xq.transpose() * dq;
  g.dwk->noalias() += cache.xkv.transpose() * dk;
  g.dwv->noalias() += cache.xkv.transpose() * dv;
  Mat<T> dxq = dq * w.wq.transpose();
  Mat<T> dxkv = dk * w.wk.transpose();
  dxkv.noalias() += dv * w.wv.transpose();
  return {std::move(dxq), std::move(dxkv)};
}

template <typename T>
struct FfnCache {
  Mat<T> x;       // input (normed)
  Mat<T> hidden;  // relu(x w1)
};

template <typename T>
Mat<T> ffn_forward(const FeedForward<T>& w, const Mat<T>& x, FfnCache<T>& cache) {
  cache.x = x;
  cache.hidden.noalias() = x * w.w1;
  cache.hidden = cache.hidden.cwiseMax(T(0));
  return cache.hidden * w.w2;
}

template <typename T>
Mat<T> ffn_backward(const FeedForward<T>& w, const FfnCache<T>& cache, const Mat<T>& dout,
                    Mat<T>& dw1, Mat<T>& dw2) {
  dw2.noalias() += cache.hidden.transpose() * dout;
  Mat<T> dhidden = dout * w.w2.transpose();
  dhidden = (cache.hidden.array() > T(0)).select(dhidden, Mat<T>::Zero(dhidden.rows(), dhidden.cols()));
  dw1.noalias() += cache.x.transpose() * dhidden;
  return dhidden * w.w1.transpose();
}

// Inverted dropout; mask entries are 0 or 1/keep so eval needs no rescale.
template <typename T>
struct DropoutCtx {
  double p = 0.0;
  Rng* rng = nullptr;
  bool active() const { return p > 0.0 && rng != nullptr; }
};

template <typename T>
Mat<T> dropout_mask(const DropoutCtx<T>& ctx, Eigen::Index rows, Eigen::Index cols) {
  Mat<T> m(rows, cols);
  const T inv_keep = static_cast<T>(1.0 / (1.0 - ctx.p));
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = uniform_unit(*ctx.rng) < ctx.p ? T(0) : inv_keep;
  return m;
}

template <typename T>
struct EncLayerCache {
  Mat<T> x_in;
  NormCache<T> n1;
  AttnCache<T> attn;
  Mat<T> attn_mask;  // dropout; empty when inactive
  Mat<T> x_mid;
  NormCache<T> n2;
  FfnCache<T> ffn;
  Mat<T> ffn_mask;
};

template <typename T>
struct DecLayerCache {
  Mat<T> x_in;
  NormCache<T> n1;
  AttnCache<T> self_attn;
  Mat<T> self_mask;
  Mat<T> x_mid1;
  NormCache<T> n2;
  AttnCache<T> cross_attn;
  Mat<T> cross_mask;
  Mat<T> x_mid2;
  NormCache<T> n3;
  FfnCache<T> ffn;
  Mat<T> ffn_mask;
};

template <typename T>
struct EncoderCache {
  std::vector<int> ids;
  std::vector<EncLayerCache<T>> layers;
  NormCache<T> final_norm;
  Mat<T> out;  // (S, d): final normed hidden states
};

template <typename T>
struct DecoderCache {
  std::vector<int> ids;
  std::vector<DecLayerCache<T>> layers;
  NormCache<T> final_norm;
  Mat<T> out;     // (Tlen, d)
  Mat<T> logits;  // (Tlen, V)
};

template <typename T>
Mat<T> embed(const ModelParamsT<T>& p, std::span<const int> ids) {
  Mat<T> x(static_cast<Eigen::Index>(ids.size()), p.config.d_model);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < p.config.vocab_size, Errc::out_of_window,
            "token id outside vocabulary");
    x.row(static_cast<Eigen::Index>(i)) = p.embedding.row(ids[i]);
  }
  return x;
}

template <typename T>
void encoder_forward(const ModelParamsT<T>& p, std::span<const int> ids, EncoderCache<T>& cache,
                     const DropoutCtx<T>& drop) {
  const auto& cfg = p.config;
  cache.ids.assign(ids.begin(), ids.end());
  Mat<T> x = embed(p, ids);
  cache.layers.resize(p.encoder.size());
  for (std::size_t li = 0; li < p.encoder.size(); ++li) {
    auto& l = p.encoder[li];
    auto& c = cache.layers[li];
    c.x_in = x;
    rmsnorm_forward(l.ln1, x, c.n1);
    Mat<T> a = attention_forward(l.attn, c.n1.y, c.n1.y, cfg.num_heads, &p.enc_rel_bias,
                                 cfg.rel_pos_buckets, cfg.rel_pos_max_distance, true, false, c.attn);
    if (drop.active()) {
      c.attn_mask = dropout_mask(drop, a.rows(), a.cols());
      a = a.cwiseProduct(c.attn_mask);
    }
    c.x_mid = x + a;
    rmsnorm_forward(l.ln2, c.x_mid, c.n2);
    Mat<T> f = ffn_forward(l.ffn, c.n2.y, c.ffn);
    if (drop.active()) {
      c.ffn_mask = dropout_mask(drop, f.rows(), f.cols());
      f = f.cwiseProduct(c.ffn_mask);
    }
    x = c.x_mid + f;
  }
  rmsnorm_forward(p.enc_norm, x, cache.final_norm);
  cache.out = cache.final_norm.y;
}

template <typename T>
void decoder_forward(const ModelParamsT<T>& p, std::span<const int> ids, const Mat<T>& enc_out,
                     DecoderCache<T>& cache, const DropoutCtx<T>& drop) {
  const auto& cfg = p.config;
  cache.ids.assign(ids.begin(), ids.end());
  Mat<T> x = embed(p, ids);
  cache.layers.resize(p.decoder.size());
  for (std::size_t li = 0; li < p.decoder.size(); ++li) {
    auto& l = p.decoder[li];
    auto& c = cache.layers[li];
    c.x_in = x;
    rmsnorm_forward(l.ln1, x, c.n1);
    Mat<T> a = attention_forward(l.self_attn, c.n1.y, c.n1.y, cfg.num_heads, &p.dec_rel_bias,
                                 cfg.rel_pos_buckets, cfg.rel_pos_max_distance, false, true,
                                 c.self_attn);
    if (drop.active()) {
      c.self_mask = dropout_mask(drop, a.rows(), a.cols());
      a = a.cwiseProduct(c.self_mask);
    }
    c.x_mid1 = x + a;
    rmsnorm_forward(l.ln2, c.x_mid1, c.n2);
    Mat<T> cr = attention_forward(l.cross_attn, c.n2.y, enc_out, cfg.num_heads,
                                  static_cast<const Mat<T>*>(nullptr), 0, 0, false, false,
                                  c.cross_attn);
    if (drop.active()) {
      c.cross_mask = dropout_mask(drop, cr.rows(), cr.cols());
      cr = cr.cwiseProduct(c.cross_mask);
    }
    c.x_mid2 = c.x_mid1 + cr;
    rmsnorm_forward(l.ln3, c.x_mid2, c.n3);
    Mat<T> f = ffn_forward(l.ffn, c.n3.y, c.ffn);
    if (drop.active()) {
      c.ffn_mask = dropout_mask(drop, f.rows(), f.cols());
      f = f.cwiseProduct(c.ffn_mask);
    }
    x = c.x_mid2 + f;
  }
  rmsnorm_forward(p.dec_norm, x, cache.final_norm);
  cache.out = cache.final_norm.y;
  cache.logits.noalias() = cache.out * p.embedding.transpose();
}

// Backward through the decoder stack. dlogits is (Tlen, V); returns the
// gradient wrt enc_out and accumulates parameter gradients.
template <typename T>
Mat<T> decoder_backward(const ModelParamsT<T>& p, const DecoderCache<T>& cache,
                        const Mat<T>& dlogits, ModelParamsT<T>& g) {
  const auto& cfg = p.config;
  g.embedding.noalias() += dlogits.transpose() * cache.out;
  Mat<T> dx = dlogits * p.embedding;
  dx = rmsnorm_backward(p.dec_norm, cache.final_norm, dx, g.dec_norm.gain);

  Mat<T> denc = Mat<T>::Zero(cache.layers.front().cross_attn.xkv.rows(), cfg.d_model);
  for (std::size_t li = p.decoder.size(); li-- > 0;) {
    const auto& l = p.decoder[li];
    auto& gl = g.decoder[li];
    const auto& c = cache.layers[li];

    Mat<T> df = c.ffn_mask.size() ? dx.cwiseProduct(c.ffn_mask) : dx;
    Mat<T> dn3 = ffn_backward(l.ffn, c.ffn, df, gl.ffn.w1, gl.ffn.w2);
    Mat<T> dx_mid2 = dx + rmsnorm_backward(l.ln3, c.n3, dn3, gl.ln3.gain);

    Mat<T> dcr = c.cross_mask.size() ? dx_mid2.cwiseProduct(c.cross_mask) : dx_mid2;
    AttnGrads<T> cg{&gl.cross_attn.wq, &gl.cross_attn.wk, &gl.cross_attn.wv, &gl.cross_attn.wo,
                    nullptr};
    auto [dn2, denc_l] = attention_backward(l.cross_attn, c.cross_attn, dcr, cfg.num_heads, 0, 0,
                                            false, cg);
    denc += denc_l;
    Mat<T> dx_mid1 = dx_mid2 + rmsnorm_backward(l.ln2, c.n2, dn2, gl.ln2.gain);

    Mat<T> da = c.self_mask.size() ? dx_mid1.cwiseProduct(c.self_mask) : dx_mid1;
    AttnGrads<T> sg{&gl.self_attn.wq, &gl.self_attn.wk, &gl.self_attn.wv, &gl.self_attn.wo,
                    &g.dec_rel_bias};
    auto [dn1q, dn1kv] = attention_backward(l.self_attn, c.self_attn, da, cfg.num_heads,
                                            cfg.rel_pos_buckets, cfg.rel_pos_max_distance, false,
                                            sg);
    Mat<T> dn1 = dn1q + dn1kv;
    dx = dx_mid1 + rmsnorm_backward(l.ln1, c.n1, dn1, gl.ln1.gain);
  }
  for (std::size_t i = 0; i < cache.ids.size(); ++i)
    g.embedding.row(cache.ids[i]) += dx.row(static_cast<Eigen::Index>(i));
  return denc;
}

template <typename T>
void encoder_backward(const ModelParamsT<T>& p, const EncoderCache<T>& cache, const Mat<T>& denc_out,
                      ModelParamsT<T>& g) {
  const auto& cfg = p.config;
  Mat<T> dx = rmsnorm_backward(p.enc_norm, cache.final_norm, denc_out, g.enc_norm.gain);
  for (std::size_t li = p.encoder.size(); li-- > 0;) {
    const auto& l = p.encoder[li];
    auto& gl = g.encoder[li];
    const auto& c = cache.layers[li];

    Mat<T> df = c.ffn_mask.size() ? dx.cwiseProduct(c.ffn_mask) : dx;
    Mat<T> dn2 = ffn_backward(l.ffn, c.ffn, df, gl.ffn.w1, gl.ffn.w2);
    Mat<T> dx_mid = dx + rmsnorm_backward(l.ln2, c.n2, dn2, gl.ln2.gain);

    Mat<T> da = c.attn_mask.size() ? dx_mid.cwiseProduct(c.attn_mask) : dx_mid;
    AttnGrads<T> ag{&gl.attn.wq, &gl.attn.wk, &gl.attn.wv, &gl.attn.wo, &g.enc_rel_bias};
    auto [dnq, dnkv] = attention_backward(l.attn, c.attn, da, cfg.num_heads, cfg.rel_pos_buckets,
                                          cfg.rel_pos_max_distance, true, ag);
    Mat<T> dn1 = dnq + dnkv;
    dx = dx_mid + rmsnorm_backward(l.ln1, c.n1, dn1, gl.ln1.gain);
  }
  for (std::size_t i = 0; i < cache.ids.size(); ++i)
    g.embedding.row(cache.ids[i]) += dx.row(static_cast<Eigen::Index>(i));
}

// Effective length = tokens before the first PAD; everything after is masked
// out of the computation entirely.
inline std::size_t effective_length(const TokenSeq& seq) {
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (seq[i] == kPadId) return i;
  return seq.size();
}

}  // namespace detail

template <typename T>
using DropoutCtx = detail::DropoutCtx<T>;

// Teacher-forced batch forward. Sequences are jagged; trailing PAD tokens
// (and anything after them) are ignored. Returns per-example logits of shape
// (effective prefix length, vocab).
template <typename T>
std::vector<Mat<T>> forward(const ModelParamsT<T>& params, std::span<const TokenSeq> inputs,
                            std::span<const TokenSeq> target_prefixes,
                            const DropoutCtx<T>& drop = {}) {
  require(inputs.size() == target_prefixes.size(), Errc::shape_mismatch,
          "batch size mismatch between inputs and prefixes");
  std::vector<Mat<T>> out(inputs.size());
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    const std::size_t in_len = detail::effective_length(inputs[b]);
    const std::size_t pre_len = detail::effective_length(target_prefixes[b]);
    require(in_len <= static_cast<std::size_t>(params.config.max_input_len), Errc::length_overflow,
            "input length " + std::to_string(in_len) + " exceeds limit");
    require(pre_len <= static_cast<std::size_t>(params.config.max_target_len), Errc::length_overflow,
            "target length " + std::to_string(pre_len) + " exceeds limit");
    require(in_len > 0 && pre_len > 0, Errc::shape_mismatch, "empty sequence in batch");
    detail::EncoderCache<T> enc;
    detail::DecoderCache<T> dec;
    auto dctx = drop;
    detail::encoder_forward(params, std::span<const int>(inputs[b].data(), in_len), enc, dctx);
    detail::decoder_forward(params, std::span<const int>(target_prefixes[b].data(), pre_len),
                            enc.out, dec, dctx);
    for (Eigen::Index i = 0; i < dec.logits.rows(); ++i)
      for (Eigen::Index j = 0; j < dec.logits.cols(); ++j)
        require(std::isfinite(static_cast<double>(dec.logits(i, j))), Errc::non_finite_loss,
                "non-finite logit");
    out[b] = std::move(dec.logits);
  }
  return out;
}

// Cross entropy of one example given precomputed logits; optionally
// accumulates dlogits (scaled by `weight`) for the backward pass.
template <typename T>
double cross_entropy(const Mat<T>& logits, std::span<const int> gold, double label_smoothing,
                     double weight, Mat<T>* dlogits) {
  require(static_cast<std::size_t>(logits.rows()) == gold.size(), Errc::shape_mismatch,
          "gold length does not match logits");
  const Eigen::Index v = logits.cols();
  double total = 0.0;
  if (dlogits) dlogits->setZero(logits.rows(), v);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = gold[static_cast<std::size_t>(i)];
    require(y >= 0 && y < v, Errc::out_of_window, "gold token outside vocabulary");
    const T mx = logits.row(i).maxCoeff();
    double z = 0.0;
    for (Eigen::Index j = 0; j < v; ++j) z += std::exp(static_cast<double>(logits(i, j) - mx));
    const double log_z = std::log(z) + static_cast<double>(mx);
    const double uniform = label_smoothing / static_cast<double>(v);
    double ce = 0.0;
    for (Eigen::Index j = 0; j < v; ++j) {
      const double q = (j == y ? 1.0 - label_smoothing : 0.0) + uniform;
      if (q == 0.0) continue;
      ce += q * (log_z - static_cast<double>(logits(i, j)));
    }
    total += ce;
    if (dlogits) {
      for (Eigen::Index j = 0; j < v; ++j) {
        const double p = std::exp(static_cast<double>(logits(i, j)) - log_z);
        const double q = (j == y ? 1.0 - label_smoothing : 0.0) + uniform;
        (*dlogits)(i, j) = static_cast<T>((p - q) * weight);
      }
    }
  }
  return total;
}

struct LossStats {
  double loss_sum = 0.0;  // summed over tokens
  long tokens = 0;
  double mean() const { return tokens > 0 ? loss_sum / tokens : 0.0; }
};

// Forward + backward of one (input, target) example. `target` is the full
// BOS...EOS sequence; the decoder sees target[0..n-2] and is scored against
// target[1..n-1]. dlogits are scaled by `weight` (typically 1/total batch
// tokens). Gradients accumulate into `grads`.
template <typename T>
LossStats example_loss_and_grad(const ModelParamsT<T>& params, const TokenSeq& input,
                                const TokenSeq& target, double label_smoothing, double weight,
                                ModelParamsT<T>& grads, const DropoutCtx<T>& drop = {}) {
  const std::size_t in_len = detail::effective_length(input);
  const std::size_t tgt_len = detail::effective_length(target);
  require(tgt_len >= 2, Errc::shape_mismatch, "target must contain BOS and EOS");
  require(in_len <= static_cast<std::size_t>(params.config.max_input_len) &&
              tgt_len - 1 <= static_cast<std::size_t>(params.config.max_target_len),
          Errc::length_overflow, "sequence exceeds configured limits");

  detail::EncoderCache<T> enc;
  detail::DecoderCache<T> dec;
  auto dctx = drop;
  detail::encoder_forward(params, std::span<const int>(input.data(), in_len), enc, dctx);
  detail::decoder_forward(params, std::span<const int>(target.data(), tgt_len - 1), enc.out, dec,
                          dctx);

  Mat<T> dlogits;
  const double ce = cross_entropy(dec.logits, std::span<const int>(target.data() + 1, tgt_len - 1),
                                  label_smoothing, weight, &dlogits);
  require(std::isfinite(ce), Errc::non_finite_loss, "loss is not finite");
  Mat<T> denc = detail::decoder_backward(params, dec, dlogits, grads);
  detail::encoder_backward(params, enc, denc, grads);
  return {ce, static_cast<long>(tgt_len - 1)};
}

// ---------------------------------------------------------------------------
// Incremental decoding with per-beam KV caches. Logits here must match the
// teacher-forced path exactly (covered by tests).
// ---------------------------------------------------------------------------

template <typename T>
struct DecodeSession {
  const ModelParamsT<T>* params;
  Mat<T> enc_out;                  // (S, d)
  std::vector<Mat<T>> cross_k, cross_v;  // per layer (S, d)

  DecodeSession(const ModelParamsT<T>& p, std::span<const int> input_ids) : params(&p) {
    detail::EncoderCache<T> enc;
    DropoutCtx<T> no_drop;
    detail::encoder_forward(p, input_ids, enc, no_drop);
    enc_out = std::move(enc.out);
    cross_k.reserve(p.decoder.size());
    cross_v.reserve(p.decoder.size());
    for (const auto& l : p.decoder) {
      cross_k.emplace_back(enc_out * l.cross_attn.wk);
      cross_v.emplace_back(enc_out * l.cross_attn.wv);
    }
  }
};

template <typename T>
struct DecodeState {
  std::vector<Mat<T>> self_k, self_v;  // per layer, rows grow per step
  int len = 0;

  explicit DecodeState(const ModelConfig& cfg)
      : self_k(cfg.num_layers), self_v(cfg.num_layers) {
    for (int l = 0; l < cfg.num_layers; ++l) {
      self_k[static_cast<std::size_t>(l)].resize(0, cfg.d_model);
      self_v[static_cast<std::size_t>(l)].resize(0, cfg.d_model);
    }
  }
};

// Feeds one token, advances the state, returns the next-token logits.
template <typename T>
Vec<T> decode_step(const DecodeSession<T>& session, DecodeState<T>& state, int token_id) {
  const auto& p = *session.params;
  const auto& cfg = p.config;
  const int pos = state.len;
  require(pos < cfg.max_target_len, Errc::length_overflow, "decode past max_target_len");
  const Eigen::Index dh = cfg.head_dim();

  Mat<T> x(1, cfg.d_model);
  require(token_id >= 0 && token_id < cfg.vocab_size, Errc::out_of_window, "bad token id");
  x.row(0) = p.embedding.row(token_id);

  auto rms = [&](const RmsNorm<T>& w, const Mat<T>& in) {
    const T ms = in.row(0).squaredNorm() / static_cast<T>(cfg.d_model);
    const T r = T(1) / std::sqrt(ms + static_cast<T>(detail::kNormEps));
    Mat<T> y(1, cfg.d_model);
    y.row(0) = (in.row(0) * r).cwiseProduct(w.gain.transpose());
    return y;
  };
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  for (std::size_t li = 0; li < p.decoder.size(); ++li) {
    const auto& l = p.decoder[li];
    // causal self-attention over the accumulated keys
    Mat<T> n1 = rms(l.ln1, x);
    Mat<T> q = n1 * l.self_attn.wq;
    Mat<T> k_new = n1 * l.self_attn.wk;
    Mat<T> v_new = n1 * l.self_attn.wv;
    auto& ks = state.self_k[li];
    auto& vs = state.self_v[li];
    ks.conservativeResize(pos + 1, Eigen::NoChange);
    vs.conservativeResize(pos + 1, Eigen::NoChange);
    ks.row(pos) = k_new.row(0);
    vs.row(pos) = v_new.row(0);
    Mat<T> attn_out(1, cfg.d_model);
    for (int h = 0; h < cfg.num_heads; ++h) {
      auto qh = q.middleCols(h * dh, dh);
      auto kh = ks.middleCols(h * dh, dh);
      auto vh = vs.middleCols(h * dh, dh);
      Vec<T> scores = (kh * qh.transpose()) * scale;
      for (int j = 0; j <= pos; ++j)
        scores(j) += p.dec_rel_bias(
            rel_pos_bucket(pos, j, cfg.rel_pos_buckets, cfg.rel_pos_max_distance, false), h);
      const T mx = scores.maxCoeff();
      Vec<T> e = (scores.array() - mx).exp();
      e /= e.sum();
      attn_out.block(0, h * dh, 1, dh).noalias() = e.transpose() * vh;
    }
    x.noalias() += attn_out * l.self_attn.wo;

    // cross-attention against the precomputed encoder keys/values
    Mat<T> n2 = rms(l.ln2, x);
    Mat<T> qc = n2 * l.cross_attn.wq;
    const auto& kc = session.cross_k[li];
    const auto& vc = session.cross_v[li];
    Mat<T> cross_out(1, cfg.d_model);
    for (int h = 0; h < cfg.num_heads; ++h) {
      auto qh = qc.middleCols(h * dh, dh);
      auto kh = kc.middleCols(h * dh, dh);
      auto vh = vc.middleCols(h * dh, dh);
      Vec<T> scores = (kh * qh.transpose()) * scale;
      const T mx = scores.maxCoeff();
      Vec<T> e = (scores.array() - mx).exp();
      e /= e.sum();
      cross_out.block(0, h * dh, 1, dh).noalias() = e.transpose() * vh;
    }
    x.noalias() += cross_out * l.cross_attn.wo;

    Mat<T> n3 = rms(l.ln3, x);
    Mat<T> hidden = (n3 * l.ffn.w1).cwiseMax(T(0));
    x.noalias() += hidden * l.ffn.w2;
  }
  Mat<T> y = rms(p.dec_norm, x);
  state.len = pos + 1;
  return (y * p.embedding.transpose()).row(0).transpose();
}

}  // namespace beatgrid::nn
