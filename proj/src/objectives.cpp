#include "cadtext/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cadtext/errors.hpp"

namespace cadtext {

namespace {

template <typename T>
T clamp_logit(T x) {
  return std::clamp(x, static_cast<T>(-kLogitClamp), static_cast<T>(kLogitClamp));
}

// log-sum-exp of a strided sequence
template <typename T>
T log_sum_exp(const T* x, std::size_t n, std::size_t stride) {
  T mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i * stride]);
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i * stride] - mx);
  return mx + std::log(s);
}

}  // namespace

nlohmann::json HeadConfig::to_json() const {
  return {{"d_embed", d_embed},
          {"use_projection", use_projection},
          {"tau", tau},
          {"learnable_tau", learnable_tau}};
}

HeadConfig HeadConfig::from_json(const nlohmann::json& j) {
  HeadConfig c;
  c.d_embed = j.value("d_embed", c.d_embed);
  c.use_projection = j.value("use_projection", c.use_projection);
  c.tau = j.value("tau", c.tau);
  c.learnable_tau = j.value("learnable_tau", c.learnable_tau);
  return c;
}

template <typename T>
Heads<T> init_heads(std::size_t d_model, const HeadConfig& cfg, std::uint64_t seed) {
  if (!(cfg.tau > 0.0)) throw ConfigError("tau must be > 0");
  if (cfg.d_embed == 0) throw ConfigError("d_embed must be > 0");
  Heads<T> h;
  h.pair_w = Matrix<T>(d_model, 1);
  h.pair_b = Matrix<T>(1, 1);
  h.proj_w = Matrix<T>(d_model, cfg.d_embed);
  h.proj_b = Matrix<T>(1, cfg.d_embed);
  h.log_tau = Matrix<T>(1, 1, static_cast<T>(std::log(cfg.tau)));
  Rng rng(Rng::mix(seed ^ 0x68656164ULL));
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_model));
  for (auto& v : h.proj_w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return h;
}

template <typename T>
Heads<T> zeros_like(const Heads<T>& h) {
  Heads<T> z = h;
  for (auto* m : {&z.pair_w, &z.pair_b, &z.proj_w, &z.proj_b, &z.log_tau}) m->fill(T(0));
  return z;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename T>
T pair_logit(std::span<const T> cls, const Heads<T>& heads) {
  T z = heads.pair_b.data()[0];
  for (std::size_t i = 0; i < cls.size(); ++i) z += cls[i] * heads.pair_w.data()[i];
  return clamp_logit(z);
}

double binary_ce_loss(double p, int label) {
  const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return label == 1 ? -std::log(q) : -std::log(1.0 - q);
}

template <typename T>
T pair_loss_backward(std::span<const T> cls, int label, const Heads<T>& heads, T weight,
                     Heads<T>& head_grads, std::span<T> d_cls) {
  T raw = heads.pair_b.data()[0];
  for (std::size_t i = 0; i < cls.size(); ++i) raw += cls[i] * heads.pair_w.data()[i];
  const double p = sigmoid(static_cast<double>(clamp_logit(raw)));
  const T loss = static_cast<T>(binary_ce_loss(p, label));

  const bool logit_clamped = std::abs(static_cast<double>(raw)) > kLogitClamp;
  const bool prob_clamped = p < kProbClamp || p > 1.0 - kProbClamp;
  const T dz = (logit_clamped || prob_clamped) ? T(0) : static_cast<T>(p - label) * weight;
  head_grads.pair_b.data()[0] += dz;
  for (std::size_t i = 0; i < cls.size(); ++i) {
    head_grads.pair_w.data()[i] += dz * cls[i];
    d_cls[i] = dz * heads.pair_w.data()[i];
  }
  return loss;
}

template <typename T>
std::vector<T> contrastive_embed(std::span<const T> cls, const Heads<T>& heads, const HeadConfig& cfg,
                                 EmbedCache<T>* cache) {
  std::vector<T> z;
  if (cfg.use_projection) {
    const std::size_t e = heads.proj_w.cols();
    z.assign(heads.proj_b.data(), heads.proj_b.data() + e);
    for (std::size_t i = 0; i < cls.size(); ++i) {
      const T c = cls[i];
      const T* w = heads.proj_w.data() + i * e;
      for (std::size_t j = 0; j < e; ++j) z[j] += c * w[j];
    }
  } else {
    z.assign(cls.begin(), cls.end());
  }
  T sq = 0;
  for (T v : z) sq += v * v;
  const T norm = std::sqrt(sq);
  std::vector<T> out(z.size());
  const T denom = norm + static_cast<T>(kNormEpsilon);
  for (std::size_t j = 0; j < z.size(); ++j) out[j] = z[j] / denom;
  if (cache) {
    cache->cls.assign(cls.begin(), cls.end());
    cache->z = std::move(z);
    cache->norm = norm;
  }
  return out;
}

template <typename T>
std::vector<T> contrastive_embed_backward(const EmbedCache<T>& cache, std::span<const T> d_v,
                                          const Heads<T>& heads, const HeadConfig& cfg,
                                          Heads<T>& head_grads) {
  // v = z / (r + eps), r = ||z||
  const T denom = cache.norm + static_cast<T>(kNormEpsilon);
  T z_dot = 0;
  for (std::size_t j = 0; j < cache.z.size(); ++j) z_dot += cache.z[j] * d_v[j];
  std::vector<T> dz(cache.z.size());
  const T coef = cache.norm > T(0) ? z_dot / (cache.norm * denom * denom) : T(0);
  for (std::size_t j = 0; j < dz.size(); ++j) dz[j] = d_v[j] / denom - cache.z[j] * coef;

  if (!cfg.use_projection) return dz;
  const std::size_t e = heads.proj_w.cols();
  std::vector<T> dcls(cache.cls.size(), T(0));
  for (std::size_t j = 0; j < e; ++j) head_grads.proj_b.data()[j] += dz[j];
  for (std::size_t i = 0; i < cache.cls.size(); ++i) {
    const T* w = heads.proj_w.data() + i * e;
    T* gw = head_grads.proj_w.data() + i * e;
    T acc = 0;
    for (std::size_t j = 0; j < e; ++j) {
      gw[j] += cache.cls[i] * dz[j];
      acc += w[j] * dz[j];
    }
    dcls[i] = acc;
  }
  return dcls;
}

template <typename T>
ContrastiveResult<T> contrastive_loss(const Matrix<T>& a, const Matrix<T>& p, T tau, bool want_grads) {
  const std::size_t b = a.rows();
  if (b < 2) throw std::invalid_argument("contrastive_loss needs a batch of at least 2 pairs");
  if (!a.same_shape(p)) throw std::invalid_argument("contrastive_loss: A and P shapes differ");
  if (!(tau > T(0))) throw std::invalid_argument("contrastive_loss: tau must be > 0");

  ContrastiveResult<T> r;
  Matrix<T> sims = kernels::matmul_nt(a, p);
  r.logits = Matrix<T>(b, b);
  Matrix<std::uint8_t> clamped(b, b);
  for (std::size_t i = 0; i < sims.size(); ++i) {
    const T raw = sims.data()[i] / tau;
    r.logits.data()[i] = clamp_logit(raw);
    clamped.data()[i] = std::abs(static_cast<double>(raw)) > kLogitClamp;
  }

  T row_loss = 0, col_loss = 0;
  std::vector<T> row_lse(b), col_lse(b);
  for (std::size_t i = 0; i < b; ++i) {
    row_lse[i] = log_sum_exp(r.logits.data() + i * b, b, 1);
    col_lse[i] = log_sum_exp(r.logits.data() + i, b, b);
    row_loss += row_lse[i] - r.logits(i, i);
    col_loss += col_lse[i] - r.logits(i, i);
  }
  const T inv_b = T(1) / static_cast<T>(b);
  r.loss = T(0.5) * (row_loss + col_loss) * inv_b;
  if (!want_grads) return r;

  // d loss / d logits
  Matrix<T> dl(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      const T row_soft = std::exp(r.logits(i, j) - row_lse[i]);
      const T col_soft = std::exp(r.logits(i, j) - col_lse[j]);
      const T target = i == j ? T(1) : T(0);
      T g = T(0.5) * inv_b * ((row_soft - target) + (col_soft - target));
      if (clamped(i, j)) g = 0;
      dl(i, j) = g;
    }
  }
  // logits = S / tau; d/d(log tau) = sum dl * (-S / tau)
  T dlt = 0;
  for (std::size_t i = 0; i < dl.size(); ++i) dlt -= dl.data()[i] * sims.data()[i] / tau;
  r.d_log_tau = dlt;
  for (auto& g : dl.values()) g /= tau;
  r.d_a = kernels::matmul(dl, p);
  r.d_p = Matrix<T>(b, a.cols());
  kernels::matmul_tn_acc(dl, a, r.d_p);
  return r;
}

MlmExample mlm_corrupt(const TokenSequence& tokens, std::size_t vocab_size, Rng& rng,
                       const MlmCorruption& rule) {
  MlmExample ex;
  const auto regular = [](std::int32_t id) { return id >= special::kCount; };
  const std::size_t n_regular_vocab =
      vocab_size > static_cast<std::size_t>(special::kCount) ? vocab_size - special::kCount : 0;
  for (int attempt = 0; attempt < 2 && ex.positions.empty(); ++attempt) {
    ex.tokens = tokens;
    for (std::size_t i = 0; i < tokens.true_length; ++i) {
      if (!regular(tokens.ids[i]) || !rng.bernoulli(rule.mask_rate)) continue;
      ex.positions.push_back(i);
      ex.targets.push_back(tokens.ids[i]);
      const double u = rng.uniform();
      if (u < rule.mask_prob) {
        ex.tokens.ids[i] = special::kMask;
      } else if (u < rule.mask_prob + rule.random_prob && n_regular_vocab > 0) {
        ex.tokens.ids[i] = special::kCount + static_cast<std::int32_t>(rng.below(n_regular_vocab));
      }
    }
  }
  if (ex.positions.empty()) ex.tokens = tokens;
  return ex;
}

template <typename T>
T mlm_loss(const Matrix<T>& states, std::span<const std::size_t> positions,
           std::span<const std::int32_t> targets, const Matrix<T>& embedding, T weight,
           Matrix<T>* d_states, Matrix<T>* d_embedding, std::size_t* n_correct) {
  if (positions.size() != targets.size())
    throw std::invalid_argument("mlm_loss: positions and targets differ in length");
  if (positions.empty()) return T(0);
  const std::size_t v = embedding.rows(), d = embedding.cols();
  Matrix<T> rows(positions.size(), d);
  for (std::size_t t = 0; t < positions.size(); ++t) {
    auto src = states.row(positions[t]);
    std::copy(src.begin(), src.end(), rows.row(t).begin());
  }
  Matrix<T> logits = kernels::matmul_nt(rows, embedding);  // targets x vocab
  const T inv_n = T(1) / static_cast<T>(positions.size());
  T loss = 0;
  Matrix<T> dlogits(positions.size(), v);
  for (std::size_t t = 0; t < positions.size(); ++t) {
    auto row = logits.row(t);
    for (auto& x : row) x = clamp_logit(x);
    const T lse = log_sum_exp(row.data(), v, 1);
    const auto target = static_cast<std::size_t>(targets[t]);
    loss += lse - row[target];
    if (n_correct) {
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == target) ++*n_correct;
    }
    for (std::size_t k = 0; k < v; ++k)
      dlogits(t, k) = weight * inv_n * (std::exp(row[k] - lse) - (k == target ? T(1) : T(0)));
  }
  if (d_states) {
    Matrix<T> drows = kernels::matmul(dlogits, embedding);
    for (std::size_t t = 0; t < positions.size(); ++t) {
      auto dst = d_states->row(positions[t]);
      auto src = drows.row(t);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  }
  if (d_embedding) kernels::matmul_tn_acc(dlogits, rows, *d_embedding);
  return loss * inv_n;
}

#define CADTEXT_INSTANTIATE(T)                                                                      \
  template Heads<T> init_heads<T>(std::size_t, const HeadConfig&, std::uint64_t);                  \
  template Heads<T> zeros_like<T>(const Heads<T>&);                                                 \
  template T pair_logit<T>(std::span<const T>, const Heads<T>&);                                    \
  template T pair_loss_backward<T>(std::span<const T>, int, const Heads<T>&, T, Heads<T>&,          \
                                   std::span<T>);                                                   \
  template std::vector<T> contrastive_embed<T>(std::span<const T>, const Heads<T>&,                \
                                               const HeadConfig&, EmbedCache<T>*);                  \
  template std::vector<T> contrastive_embed_backward<T>(const EmbedCache<T>&, std::span<const T>,  \
                                                        const Heads<T>&, const HeadConfig&,         \
                                                        Heads<T>&);                                 \
  template ContrastiveResult<T> contrastive_loss<T>(const Matrix<T>&, const Matrix<T>&, T, bool);  \
  template T mlm_loss<T>(const Matrix<T>&, std::span<const std::size_t>,                            \
                         std::span<const std::int32_t>, const Matrix<T>&, T, Matrix<T>*,            \
                         Matrix<T>*, std::size_t*);

CADTEXT_INSTANTIATE(float)
CADTEXT_INSTANTIATE(double)

#undef CADTEXT_INSTANTIATE

}  // namespace cadtext
