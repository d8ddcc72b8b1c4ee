#pragma once

// Training objectives and their heads: binary pair classification, symmetric
// contrastive alignment with temperature, and masked-token prediction with
// weights tied to the token embedding.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cadtext/encoder.hpp"
#include "cadtext/kernels.hpp"
#include "cadtext/random.hpp"
#include "cadtext/tokenizer.hpp"
#include "json.hpp"

namespace cadtext {

inline constexpr double kLogitClamp = 50.0;
inline constexpr double kProbClamp = 1e-7;
inline constexpr double kNormEpsilon = 1e-12;

struct HeadConfig {
  std::size_t d_embed = 64;
  bool use_projection = true;
  double tau = 0.07;
  bool learnable_tau = false;

  nlohmann::json to_json() const;
  static HeadConfig from_json(const nlohmann::json& j);
  bool operator==(const HeadConfig&) const = default;
};

template <typename T>
struct Heads {
  Matrix<T> pair_w;   // d_model x 1
  Matrix<T> pair_b;   // 1 x 1
  Matrix<T> proj_w;   // d_model x d_embed
  Matrix<T> proj_b;   // 1 x d_embed
  Matrix<T> log_tau;  // 1 x 1, temperature stored as its log

  T tau() const { return std::exp(log_tau.data()[0]); }
};

// Pair head starts at zero (probability 0.5); projection ~ U(+-1/sqrt(d)).
template <typename T>
Heads<T> init_heads(std::size_t d_model, const HeadConfig& cfg, std::uint64_t seed);
template <typename T>
Heads<T> zeros_like(const Heads<T>& h);

// ---- pair classification -------------------------------------------------

// Affine logit clamped to +-kLogitClamp.
template <typename T>
T pair_logit(std::span<const T> cls, const Heads<T>& heads);

double sigmoid(double x);
// sigmoid(logit) of the head's affine map
template <typename T>
T pair_probability(std::span<const T> cls, const Heads<T>& heads) {
  return static_cast<T>(sigmoid(static_cast<double>(pair_logit(cls, heads))));
}

// -label ln p - (1 - label) ln(1 - p), p clamped to [1e-7, 1 - 1e-7].
double binary_ce_loss(double p, int label);

// Loss of one example; accumulates head gradients (scaled by `weight`) and
// writes weight * d(loss)/d(cls) into d_cls.
template <typename T>
T pair_loss_backward(std::span<const T> cls, int label, const Heads<T>& heads, T weight,
                     Heads<T>& head_grads, std::span<T> d_cls);

// ---- contrastive --------------------------------------------------------

template <typename T>
struct EmbedCache {
  std::vector<T> cls;
  std::vector<T> z;  // pre-normalization
  T norm = 0;
};

// Projection (when enabled) then L2 normalization with epsilon in the
// denominator: v = z / (||z|| + 1e-12).
template <typename T>
std::vector<T> contrastive_embed(std::span<const T> cls, const Heads<T>& heads, const HeadConfig& cfg,
                                 EmbedCache<T>* cache = nullptr);

// Given d(loss)/d(v), accumulates projection gradients and returns d(loss)/d(cls).
template <typename T>
std::vector<T> contrastive_embed_backward(const EmbedCache<T>& cache, std::span<const T> d_v,
                                          const Heads<T>& heads, const HeadConfig& cfg,
                                          Heads<T>& head_grads);

template <typename T>
struct ContrastiveResult {
  T loss = 0;
  Matrix<T> logits;
  Matrix<T> d_a;  // filled when gradients requested
  Matrix<T> d_p;
  T d_log_tau = 0;
};

// Symmetric InfoNCE over B matched rows:
//   L = A P^T / tau (clamped to +-50)
//   loss = (mean_i CE(row i, target i) + mean_j CE(col j, target j)) / 2
// Throws std::invalid_argument when B < 2 or the shapes disagree.
template <typename T>
ContrastiveResult<T> contrastive_loss(const Matrix<T>& a, const Matrix<T>& p, T tau,
                                      bool want_grads = false);

// ---- masked language modelling -----------------------------------------

struct MlmCorruption {
  double mask_rate = 0.15;
  double mask_prob = 0.8;    // selected -> [MASK]
  double random_prob = 0.1;  // selected -> random regular token; rest unchanged
};

struct MlmExample {
  TokenSequence tokens;
  std::vector<std::size_t> positions;
  std::vector<std::int32_t> targets;
};

// Positions holding regular (non-special) tokens are selected independently
// with mask_rate. If nothing is selected the draw is repeated once.
MlmExample mlm_corrupt(const TokenSequence& tokens, std::size_t vocab_size, Rng& rng,
                       const MlmCorruption& rule = {});

// Mean cross-entropy of softmax(state . E^T) at the target positions. With
// non-null gradient outputs, writes weight * d/d(states) into d_states
// (same shape as states) and accumulates weight * d/dE into d_embedding.
// Returns 0 for an empty target set.
template <typename T>
T mlm_loss(const Matrix<T>& states, std::span<const std::size_t> positions,
           std::span<const std::int32_t> targets, const Matrix<T>& embedding, T weight = T(1),
           Matrix<T>* d_states = nullptr, Matrix<T>* d_embedding = nullptr,
           std::size_t* n_correct = nullptr);

}  // namespace cadtext
