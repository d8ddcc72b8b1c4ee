#include "cadtext/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "cadtext/errors.hpp"

namespace cadtext {

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename T>
Matrix<T> slice_cols(const Matrix<T>& m, std::size_t c0, std::size_t width) {
  Matrix<T> out(m.rows(), width);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < width; ++c) out(r, c) = m(r, c0 + c);
  return out;
}

template <typename T>
void add_cols(Matrix<T>& dst, const Matrix<T>& src, std::size_t c0) {
  for (std::size_t r = 0; r < src.rows(); ++r)
    for (std::size_t c = 0; c < src.cols(); ++c) dst(r, c0 + c) += src(r, c);
}

template <typename T>
Matrix<T> affine(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
  Matrix<T> y = kernels::matmul(x, w);
  kernels::add_row_bias(y, b);
  return y;
}

// Gradient of y = x w + b: accumulates dw, db (when trainable) and returns dx
// (when wanted).
template <typename T>
void affine_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dy, Matrix<T>* dw,
                     Matrix<T>* db, Matrix<T>* dx) {
  if (dw) kernels::matmul_tn_acc(x, dy, *dw);
  if (db) kernels::acc_column_sums(dy, *db);
  if (dx) kernels::matmul_nt_acc(dy, w, *dx);
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(M_PI));
  return cdf + x * pdf;
}

template <typename T>
void layer_norm_forward(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta,
                        Matrix<T>& xhat, std::vector<T>& rstd, Matrix<T>& out) {
  kernels::layer_norm_rows(x, static_cast<T>(kLayerNormEps), xhat, rstd);
  out = Matrix<T>(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c)
      out(r, c) = xhat(r, c) * gamma.data()[c] + beta.data()[c];
}

template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& xhat, const std::vector<T>& rstd,
                              const Matrix<T>& gamma, Matrix<T>* dgamma, Matrix<T>* dbeta) {
  const std::size_t n = dy.rows(), d = dy.cols();
  Matrix<T> dx(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    T mean_g = 0, mean_gx = 0;
    for (std::size_t c = 0; c < d; ++c) {
      const T g = dy(r, c) * gamma.data()[c];
      mean_g += g;
      mean_gx += g * xhat(r, c);
      if (dgamma) dgamma->data()[c] += dy(r, c) * xhat(r, c);
      if (dbeta) dbeta->data()[c] += dy(r, c);
    }
    mean_g /= static_cast<T>(d);
    mean_gx /= static_cast<T>(d);
    for (std::size_t c = 0; c < d; ++c) {
      const T g = dy(r, c) * gamma.data()[c];
      dx(r, c) = rstd[r] * (g - mean_g - xhat(r, c) * mean_gx);
    }
  }
  return dx;
}

template <typename T>
std::vector<T> dropout_mask(std::size_t n, double p, Rng& rng) {
  std::vector<T> mask(n);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask) m = rng.bernoulli(p) ? T(0) : keep_scale;
  return mask;
}

template <typename T>
void apply_mask(Matrix<T>& x, const std::vector<T>& mask) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] *= mask[i];
}

// Multi-head attention of `xq` over `xkv` (all keys visible). Fills the
// cache and returns the pre-output-projection context.
template <typename T>
Matrix<T> multi_head(const Matrix<T>& xq, const Matrix<T>& xkv, const AttentionWeights<T>& w,
                     std::size_t heads, AttentionCache<T>& cache) {
  const std::size_t d = w.wq.cols();
  const std::size_t dk = d / heads;
  cache.input_q = xq;
  cache.input_kv = xkv;
  cache.q = affine(xq, w.wq, w.bq);
  cache.k = affine(xkv, w.wk, w.bk);
  cache.v = affine(xkv, w.wv, w.bv);
  cache.probs.assign(heads, {});
  cache.context = Matrix<T>(xq.rows(), d);
  const std::vector<std::uint8_t> all_keys(xkv.rows(), 1);
  for (std::size_t h = 0; h < heads; ++h) {
    auto r = attention(slice_cols(cache.q, h * dk, dk), slice_cols(cache.k, h * dk, dk),
                       slice_cols(cache.v, h * dk, dk), all_keys);
    add_cols(cache.context, r.output, h * dk);
    cache.probs[h] = std::move(r.probabilities);
  }
  return affine(cache.context, w.wo, w.bo);
}

// Backward of multi_head given d(output). Accumulates weight gradients into
// `g` when non-null and returns (d xq, d xkv) when `need_input_grad`.
template <typename T>
std::pair<Matrix<T>, Matrix<T>> multi_head_backward(const AttentionCache<T>& c,
                                                    const AttentionWeights<T>& w,
                                                    std::size_t heads, const Matrix<T>& dout,
                                                    AttentionWeights<T>* g, bool need_input_grad) {
  const std::size_t d = w.wq.cols();
  const std::size_t dk = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));

  Matrix<T> dctx(dout.rows(), d);
  affine_backward(c.context, w.wo, dout, g ? &g->wo : nullptr, g ? &g->bo : nullptr, &dctx);

  Matrix<T> dq(c.q.rows(), d), dk_all(c.k.rows(), d), dv(c.v.rows(), d);
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix<T>& p = c.probs[h];
    const auto dctx_h = slice_cols(dctx, h * dk, dk);
    const auto qh = slice_cols(c.q, h * dk, dk);
    const auto kh = slice_cols(c.k, h * dk, dk);
    const auto vh = slice_cols(c.v, h * dk, dk);

    Matrix<T> dv_h(vh.rows(), dk);
    kernels::matmul_tn_acc(p, dctx_h, dv_h);
    Matrix<T> dp = kernels::matmul_nt(dctx_h, vh);
    // softmax backward, row by row
    for (std::size_t r = 0; r < p.rows(); ++r) {
      T dot = 0;
      for (std::size_t j = 0; j < p.cols(); ++j) dot += dp(r, j) * p(r, j);
      for (std::size_t j = 0; j < p.cols(); ++j) dp(r, j) = p(r, j) * (dp(r, j) - dot) * scale;
    }
    Matrix<T> dq_h = kernels::matmul(dp, kh);
    Matrix<T> dk_h(kh.rows(), dk);
    kernels::matmul_tn_acc(dp, qh, dk_h);
    add_cols(dq, dq_h, h * dk);
    add_cols(dk_all, dk_h, h * dk);
    add_cols(dv, dv_h, h * dk);
  }

  Matrix<T> dxq, dxkv;
  if (need_input_grad) {
    dxq = Matrix<T>(c.input_q.rows(), d);
    dxkv = Matrix<T>(c.input_kv.rows(), d);
  }
  Matrix<T>* pxq = need_input_grad ? &dxq : nullptr;
  Matrix<T>* pxkv = need_input_grad ? &dxkv : nullptr;
  affine_backward(c.input_q, w.wq, dq, g ? &g->wq : nullptr, g ? &g->bq : nullptr, pxq);
  affine_backward(c.input_kv, w.wk, dk_all, g ? &g->wk : nullptr, g ? &g->bk : nullptr, pxkv);
  affine_backward(c.input_kv, w.wv, dv, g ? &g->wv : nullptr, g ? &g->bv : nullptr, pxkv);
  return {std::move(dxq), std::move(dxkv)};
}

template <typename T>
AttentionWeights<T> make_attention(std::size_t d) {
  return {Matrix<T>(d, d), Matrix<T>(1, d), Matrix<T>(d, d), Matrix<T>(1, d),
          Matrix<T>(d, d), Matrix<T>(1, d), Matrix<T>(d, d), Matrix<T>(1, d)};
}

template <typename M, typename P, typename Fn>
void visit_attention(P& a, const std::string& prefix, bool frozen, Fn& fn) {
  fn(prefix + ".wq", static_cast<M&>(a.wq), frozen);
  fn(prefix + ".bq", static_cast<M&>(a.bq), frozen);
  fn(prefix + ".wk", static_cast<M&>(a.wk), frozen);
  fn(prefix + ".bk", static_cast<M&>(a.bk), frozen);
  fn(prefix + ".wv", static_cast<M&>(a.wv), frozen);
  fn(prefix + ".bv", static_cast<M&>(a.bv), frozen);
  fn(prefix + ".wo", static_cast<M&>(a.wo), frozen);
  fn(prefix + ".bo", static_cast<M&>(a.bo), frozen);
}

template <typename P, typename M, typename Fn>
void visit_all(P& p, const EncoderConfig& cfg, Fn& fn) {
  fn("token_embedding", static_cast<M&>(p.token_embedding), cfg.embeddings_frozen());
  fn("segment_embedding", static_cast<M&>(p.segment_embedding), cfg.embeddings_frozen());
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const std::string pre = "layers." + std::to_string(i);
    const bool frozen = cfg.layer_frozen(i);
    visit_attention<M>(l.attn, pre + ".attn", frozen, fn);
    fn(pre + ".ln1_gamma", static_cast<M&>(l.ln1_gamma), frozen);
    fn(pre + ".ln1_beta", static_cast<M&>(l.ln1_beta), frozen);
    fn(pre + ".ff_w1", static_cast<M&>(l.ff_w1), frozen);
    fn(pre + ".ff_b1", static_cast<M&>(l.ff_b1), frozen);
    fn(pre + ".ff_w2", static_cast<M&>(l.ff_w2), frozen);
    fn(pre + ".ff_b2", static_cast<M&>(l.ff_b2), frozen);
    fn(pre + ".ln2_gamma", static_cast<M&>(l.ln2_gamma), frozen);
    fn(pre + ".ln2_beta", static_cast<M&>(l.ln2_beta), frozen);
  }
  if (p.output_attention)
    visit_attention<M>(*p.output_attention, "output_attention",
                                                      cfg.output_attention_frozen(), fn);
}

}  // namespace

void EncoderConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(special::kCount))
    throw ConfigError("vocab_size must exceed the number of special tokens");
  if (d_model == 0 || n_heads == 0 || d_ff == 0) throw ConfigError("encoder dimensions must be > 0");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (output_attention_heads != 0 && d_model % output_attention_heads != 0)
    throw ConfigError("d_model must be divisible by output_attention_heads");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
  const std::size_t levels = n_layers + (output_attention_heads ? 1 : 0);
  if (frozen_layers > levels) throw ConfigError("frozen_layers exceeds the number of layers");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"vocab_size", vocab_size},
          {"d_model", d_model},
          {"n_layers", n_layers},
          {"n_heads", n_heads},
          {"d_ff", d_ff},
          {"max_len", max_len},
          {"dropout_p", dropout_p},
          {"output_attention_heads", output_attention_heads},
          {"frozen_layers", frozen_layers},
          {"seed", seed}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.max_len = j.value("max_len", c.max_len);
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  c.output_attention_heads = j.value("output_attention_heads", c.output_attention_heads);
  c.frozen_layers = j.value("frozen_layers", c.frozen_layers);
  c.seed = j.value("seed", c.seed);
  return c;
}

template <typename T>
std::size_t Parameters<T>::parameter_count() const {
  std::size_t n = 0;
  EncoderConfig any;
  any.n_layers = layers.size();
  for_each_tensor<T>(*this, any, [&](const std::string&, const Matrix<T>& m, bool) { n += m.size(); });
  return n;
}

template <typename T>
void for_each_tensor(Parameters<T>& p, const EncoderConfig& cfg,
                     const std::function<void(const std::string&, Matrix<T>&, bool)>& fn) {
  visit_all<Parameters<T>, Matrix<T>>(p, cfg, fn);
}

template <typename T>
void for_each_tensor(const Parameters<T>& p, const EncoderConfig& cfg,
                     const std::function<void(const std::string&, const Matrix<T>&, bool)>& fn) {
  visit_all<const Parameters<T>, const Matrix<T>>(p, cfg, fn);
}

template <typename T>
Parameters<T> init_parameters(const EncoderConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  Parameters<T> p;
  p.token_embedding = Matrix<T>(cfg.vocab_size, d);
  p.segment_embedding = Matrix<T>(2, d);
  p.layers.resize(cfg.n_layers);
  for (auto& l : p.layers) {
    l.attn = make_attention<T>(d);
    l.ln1_gamma = Matrix<T>(1, d, T(1));
    l.ln1_beta = Matrix<T>(1, d);
    l.ff_w1 = Matrix<T>(d, cfg.d_ff);
    l.ff_b1 = Matrix<T>(1, cfg.d_ff);
    l.ff_w2 = Matrix<T>(cfg.d_ff, d);
    l.ff_b2 = Matrix<T>(1, d);
    l.ln2_gamma = Matrix<T>(1, d, T(1));
    l.ln2_beta = Matrix<T>(1, d);
  }
  if (cfg.output_attention_heads) p.output_attention = make_attention<T>(d);

  Rng rng(cfg.seed);
  for_each_tensor<T>(p, cfg, [&](const std::string& name, Matrix<T>& m, bool) {
    const bool is_weight = name.find("embedding") != std::string::npos ||
                           name.ends_with(".wq") || name.ends_with(".wk") ||
                           name.ends_with(".wv") || name.ends_with(".wo") ||
                           name.ends_with("ff_w1") || name.ends_with("ff_w2");
    if (!is_weight) return;
    // Every tensor maps rows() inputs; an embedding is a one-hot linear map.
    const std::size_t fan_in = m.rows();
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : m.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  });
  return p;
}

template <typename T>
Parameters<T> zeros_like(const Parameters<T>& p) {
  Parameters<T> z = p;
  EncoderConfig any;
  any.n_layers = z.layers.size();
  for_each_tensor<T>(z, any, [](const std::string&, Matrix<T>& m, bool) { m.fill(T(0)); });
  return z;
}

template <typename T, typename U>
Parameters<U> cast_parameters(const Parameters<T>& p) {
  auto cast = [](const Matrix<T>& m) {
    Matrix<U> out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = static_cast<U>(m.data()[i]);
    return out;
  };
  auto cast_attn = [&](const AttentionWeights<T>& a) {
    return AttentionWeights<U>{cast(a.wq), cast(a.bq), cast(a.wk), cast(a.bk),
                               cast(a.wv), cast(a.bv), cast(a.wo), cast(a.bo)};
  };
  Parameters<U> out;
  out.token_embedding = cast(p.token_embedding);
  out.segment_embedding = cast(p.segment_embedding);
  for (const auto& l : p.layers)
    out.layers.push_back({cast_attn(l.attn), cast(l.ln1_gamma), cast(l.ln1_beta), cast(l.ff_w1),
                          cast(l.ff_b1), cast(l.ff_w2), cast(l.ff_b2), cast(l.ln2_gamma),
                          cast(l.ln2_beta)});
  if (p.output_attention) out.output_attention = cast_attn(*p.output_attention);
  return out;
}

template <typename T>
AttentionResult<T> attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                             std::span<const std::uint8_t> key_mask) {
  if (q.cols() != k.cols() || k.rows() != v.rows() || key_mask.size() != k.rows())
    throw std::invalid_argument("attention: incompatible shapes");
  AttentionResult<T> r;
  r.probabilities = kernels::matmul_nt(q, k);
  const T scale = T(1) / std::sqrt(static_cast<T>(q.cols()));
  for (auto& s : r.probabilities.values()) s *= scale;
  kernels::masked_softmax_rows(r.probabilities, key_mask);
  r.output = kernels::matmul(r.probabilities, v);
  return r;
}

template <typename T>
Matrix<T> positional_encoding(std::size_t max_len, std::size_t d_model) {
  Matrix<T> pe(max_len, d_model);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
      pe(pos, i) = static_cast<T>(std::sin(static_cast<double>(pos) * freq));
      if (i + 1 < d_model) pe(pos, i + 1) = static_cast<T>(std::cos(static_cast<double>(pos) * freq));
    }
  }
  return pe;
}

template <typename T>
EncoderOutput<T> forward(const TokenSequence& tokens, const Parameters<T>& params,
                         const EncoderConfig& cfg, Mode mode, Rng* rng, ForwardCache<T>* cache) {
  const std::size_t n = tokens.true_length;
  const std::size_t d = cfg.d_model;
  if (n == 0 || n > tokens.ids.size()) throw DataError("token sequence has no content");
  if (n > cfg.max_len) throw DataError("token sequence longer than the encoder max_len");
  for (std::size_t i = 0; i < n; ++i)
    if (tokens.ids[i] < 0 || static_cast<std::size_t>(tokens.ids[i]) >= cfg.vocab_size)
      throw DataError("token id " + std::to_string(tokens.ids[i]) + " out of range for vocab size " +
                      std::to_string(cfg.vocab_size));
  const bool dropout = mode == Mode::Train && cfg.dropout_p > 0.0;
  if (dropout && !rng) throw std::invalid_argument("forward: training with dropout needs an rng");

  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  c = ForwardCache<T>{};
  c.ids.assign(tokens.ids.begin(), tokens.ids.begin() + static_cast<std::ptrdiff_t>(n));
  c.segments.assign(tokens.segment_ids.begin(), tokens.segment_ids.begin() + static_cast<std::ptrdiff_t>(n));
  c.layers.resize(cfg.n_layers);

  const T emb_scale = std::sqrt(static_cast<T>(d));
  const Matrix<T> pe = positional_encoding<T>(n, d);
  Matrix<T> x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto tok = params.token_embedding.row(static_cast<std::size_t>(c.ids[i]));
    auto seg = params.segment_embedding.row(c.segments[i] ? 1 : 0);
    for (std::size_t j = 0; j < d; ++j) x(i, j) = emb_scale * tok[j] + seg[j] + pe(i, j);
  }

  for (std::size_t li = 0; li < cfg.n_layers; ++li) {
    const auto& w = params.layers[li];
    auto& lc = c.layers[li];
    Matrix<T> a = multi_head(x, x, w.attn, cfg.n_heads, lc.attn);
    if (dropout) lc.drop_attn = dropout_mask<T>(a.size(), cfg.dropout_p, *rng);
    apply_mask(a, lc.drop_attn);
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += x.data()[i];
    layer_norm_forward(a, w.ln1_gamma, w.ln1_beta, lc.ln1_xhat, lc.ln1_rstd, lc.ln1_out);

    lc.ff_pre = affine(lc.ln1_out, w.ff_w1, w.ff_b1);
    lc.ff_act = lc.ff_pre;
    for (auto& v : lc.ff_act.values()) v = gelu(v);
    Matrix<T> f = affine(lc.ff_act, w.ff_w2, w.ff_b2);
    if (dropout) lc.drop_ff = dropout_mask<T>(f.size(), cfg.dropout_p, *rng);
    apply_mask(f, lc.drop_ff);
    for (std::size_t i = 0; i < f.size(); ++i) f.data()[i] += lc.ln1_out.data()[i];
    Matrix<T> next;
    layer_norm_forward(f, w.ln2_gamma, w.ln2_beta, lc.ln2_xhat, lc.ln2_rstd, next);
    x = std::move(next);
  }

  EncoderOutput<T> out;
  out.sequence_states = Matrix<T>(std::max(cfg.max_len, tokens.ids.size()), d);
  std::copy(x.data(), x.data() + x.size(), out.sequence_states.data());
  if (params.output_attention) {
    c.output.emplace();
    Matrix<T> first(1, d);
    std::copy(x.data(), x.data() + d, first.data());
    Matrix<T> pooled = multi_head(first, x, *params.output_attention, cfg.output_attention_heads, *c.output);
    out.cls_state.assign(pooled.data(), pooled.data() + d);
  } else {
    out.cls_state.assign(x.data(), x.data() + d);
  }
  c.recorded = true;
  if (!cache) c = ForwardCache<T>{};
  return out;
}

template <typename T>
void backward(const ForwardCache<T>& cache, const Parameters<T>& params, const EncoderConfig& cfg,
              std::span<const T> d_cls, const Matrix<T>* d_sequence, Parameters<T>& grads) {
  if (!cache.recorded) throw std::logic_error("backward called without a recorded forward pass");
  const std::size_t n = cache.ids.size();
  const std::size_t d = cfg.d_model;
  if (d_cls.size() != d) throw std::invalid_argument("backward: d_cls has the wrong size");

  Matrix<T> dx(n, d);
  if (d_sequence) {
    if (d_sequence->cols() != d || d_sequence->rows() < n)
      throw std::invalid_argument("backward: d_sequence has the wrong shape");
    std::copy(d_sequence->data(), d_sequence->data() + n * d, dx.data());
  }

  if (params.output_attention) {
    if (!cache.output) throw std::logic_error("backward: missing output attention cache");
    const bool frozen = cfg.output_attention_frozen();
    if (frozen) return;  // everything below is frozen as well
    Matrix<T> dpooled(1, d);
    std::copy(d_cls.begin(), d_cls.end(), dpooled.data());
    auto [dfirst, dstates] = multi_head_backward(*cache.output, *params.output_attention,
                                                 cfg.output_attention_heads, dpooled,
                                                 &*grads.output_attention, true);
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] += dstates.data()[i];
    for (std::size_t j = 0; j < d; ++j) dx(0, j) += dfirst(0, j);
  } else {
    for (std::size_t j = 0; j < d; ++j) dx(0, j) += d_cls[j];
  }

  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    if (cfg.layer_frozen(li)) return;  // frozen from the bottom: nothing below trains either
    const auto& w = params.layers[li];
    const auto& lc = cache.layers[li];
    auto& g = grads.layers[li];

    // x_next = LN2(ln1_out + drop(ff))
    Matrix<T> dz2 = layer_norm_backward(dx, lc.ln2_xhat, lc.ln2_rstd, w.ln2_gamma, &g.ln2_gamma, &g.ln2_beta);
    Matrix<T> dy = dz2;
    Matrix<T> dff = std::move(dz2);
    apply_mask(dff, lc.drop_ff);
    Matrix<T> dact(n, cfg.d_ff);
    affine_backward(lc.ff_act, w.ff_w2, dff, &g.ff_w2, &g.ff_b2, &dact);
    for (std::size_t i = 0; i < dact.size(); ++i) dact.data()[i] *= gelu_grad(lc.ff_pre.data()[i]);
    affine_backward(lc.ln1_out, w.ff_w1, dact, &g.ff_w1, &g.ff_b1, &dy);

    // ln1_out = LN1(x + drop(attn(x)))
    Matrix<T> dz1 = layer_norm_backward(dy, lc.ln1_xhat, lc.ln1_rstd, w.ln1_gamma, &g.ln1_gamma, &g.ln1_beta);
    Matrix<T> da = dz1;
    apply_mask(da, lc.drop_attn);
    const bool need_dx = li > 0 || !cfg.embeddings_frozen();
    auto [dxq, dxkv] = multi_head_backward(lc.attn, w.attn, cfg.n_heads, da, &g.attn, need_dx);
    if (!need_dx) return;
    for (std::size_t i = 0; i < dz1.size(); ++i) dz1.data()[i] += dxq.data()[i] + dxkv.data()[i];
    dx = std::move(dz1);
  }

  if (cfg.embeddings_frozen()) return;
  const T emb_scale = std::sqrt(static_cast<T>(d));
  for (std::size_t i = 0; i < n; ++i) {
    auto tok = grads.token_embedding.row(static_cast<std::size_t>(cache.ids[i]));
    auto seg = grads.segment_embedding.row(cache.segments[i] ? 1 : 0);
    for (std::size_t j = 0; j < d; ++j) {
      tok[j] += emb_scale * dx(i, j);
      seg[j] += dx(i, j);
    }
  }
}

#define CADTEXT_INSTANTIATE(T)                                                                     \
  template struct Parameters<T>;                                                                   \
  template void for_each_tensor<T>(Parameters<T>&, const EncoderConfig&,                           \
                                   const std::function<void(const std::string&, Matrix<T>&, bool)>&); \
  template void for_each_tensor<T>(                                                                \
      const Parameters<T>&, const EncoderConfig&,                                                  \
      const std::function<void(const std::string&, const Matrix<T>&, bool)>&);                     \
  template Parameters<T> init_parameters<T>(const EncoderConfig&);                                 \
  template Parameters<T> zeros_like<T>(const Parameters<T>&);                                      \
  template AttentionResult<T> attention<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,   \
                                           std::span<const std::uint8_t>);                         \
  template Matrix<T> positional_encoding<T>(std::size_t, std::size_t);                             \
  template EncoderOutput<T> forward<T>(const TokenSequence&, const Parameters<T>&,                 \
                                       const EncoderConfig&, Mode, Rng*, ForwardCache<T>*);        \
  template void backward<T>(const ForwardCache<T>&, const Parameters<T>&, const EncoderConfig&,    \
                            std::span<const T>, const Matrix<T>*, Parameters<T>&);

CADTEXT_INSTANTIATE(float)
CADTEXT_INSTANTIATE(double)
template Parameters<double> cast_parameters<float, double>(const Parameters<float>&);
template Parameters<float> cast_parameters<double, float>(const Parameters<double>&);

#undef CADTEXT_INSTANTIATE

}  // namespace cadtext
