#pragma once

// Post-norm transformer text encoder with an optional extra multi-head
// attention layer that pools the final states into the CLS vector.
//
// forward() only computes the unpadded prefix [0, true_length). Padded
// positions are masked out as keys everywhere and never feed back into
// unpadded rows, so this is exactly the masked full-length computation for
// every real position; padded rows of sequence_states are returned as zero.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cadtext/kernels.hpp"
#include "cadtext/random.hpp"
#include "cadtext/tokenizer.hpp"
#include "json.hpp"

namespace cadtext {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 8;
  std::size_t d_ff = 256;
  std::size_t max_len = 128;
  double dropout_p = 0.1;
  // 0 disables the extra output attention layer.
  std::size_t output_attention_heads = 0;
  // Freezes the embeddings and layers [0, frozen_layers); a value above
  // n_layers also freezes the output attention layer.
  std::size_t frozen_layers = 0;
  std::uint64_t seed = 0;

  void validate() const;
  bool embeddings_frozen() const { return frozen_layers > 0; }
  bool layer_frozen(std::size_t layer) const { return layer < frozen_layers; }
  bool output_attention_frozen() const { return frozen_layers > n_layers; }

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  bool operator==(const EncoderConfig&) const = default;
};

enum class Mode { Train, Eval };

template <typename T>
struct AttentionWeights {
  Matrix<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
struct LayerWeights {
  AttentionWeights<T> attn;
  Matrix<T> ln1_gamma, ln1_beta;
  Matrix<T> ff_w1, ff_b1, ff_w2, ff_b2;
  Matrix<T> ln2_gamma, ln2_beta;
};

template <typename T>
struct Parameters {
  Matrix<T> token_embedding;    // vocab_size x d_model
  Matrix<T> segment_embedding;  // 2 x d_model
  std::vector<LayerWeights<T>> layers;
  std::optional<AttentionWeights<T>> output_attention;

  std::size_t parameter_count() const;
};

// Visits every tensor in a fixed order with a stable dotted name and whether
// the config freezes it.
template <typename T>
void for_each_tensor(Parameters<T>& p, const EncoderConfig& cfg,
                     const std::function<void(const std::string&, Matrix<T>&, bool frozen)>& fn);
template <typename T>
void for_each_tensor(const Parameters<T>& p, const EncoderConfig& cfg,
                     const std::function<void(const std::string&, const Matrix<T>&, bool frozen)>& fn);

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn in for_each_tensor
// order from Rng(cfg.seed); biases 0; layer-norm scale 1, shift 0.
template <typename T>
Parameters<T> init_parameters(const EncoderConfig& cfg);

template <typename T>
Parameters<T> zeros_like(const Parameters<T>& p);

template <typename T, typename U>
Parameters<U> cast_parameters(const Parameters<T>& p);

template <typename T>
struct AttentionResult {
  Matrix<T> output;         // rows(q) x cols(v)
  Matrix<T> probabilities;  // rows(q) x rows(k)
};

// softmax(Q K^T / sqrt(d_k) + mask_bias) V with -inf bias on key_mask == 0.
template <typename T>
AttentionResult<T> attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                             std::span<const std::uint8_t> key_mask);

template <typename T>
struct EncoderOutput {
  std::vector<T> cls_state;    // d_model
  Matrix<T> sequence_states;   // max_len x d_model, padded rows zero
};

template <typename T>
struct AttentionCache {
  Matrix<T> input_q, input_kv;  // projection inputs
  Matrix<T> q, k, v;
  std::vector<Matrix<T>> probs;  // per head
  Matrix<T> context;
};

template <typename T>
struct LayerCache {
  AttentionCache<T> attn;
  std::vector<T> drop_attn;  // inverted-dropout multipliers, empty if none
  Matrix<T> ln1_xhat;
  std::vector<T> ln1_rstd;
  Matrix<T> ln1_out;
  Matrix<T> ff_pre;  // before GELU
  Matrix<T> ff_act;
  std::vector<T> drop_ff;
  Matrix<T> ln2_xhat;
  std::vector<T> ln2_rstd;
};

template <typename T>
struct ForwardCache {
  bool recorded = false;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> segments;
  std::vector<LayerCache<T>> layers;
  std::optional<AttentionCache<T>> output;
};

// Throws DataError for token ids outside [0, vocab_size) or an empty sequence.
// `rng` is required in Train mode with dropout_p > 0.
template <typename T>
EncoderOutput<T> forward(const TokenSequence& tokens, const Parameters<T>& params,
                         const EncoderConfig& cfg, Mode mode, Rng* rng,
                         ForwardCache<T>* cache = nullptr);

// Accumulates d(loss)/d(params) into `grads` for every unfrozen tensor, given
// the loss gradient w.r.t. cls_state and optionally w.r.t. sequence_states
// (rows >= true_length ignored). Frozen tensors are left untouched. Throws
// std::logic_error if the cache was not recorded by a forward pass.
template <typename T>
void backward(const ForwardCache<T>& cache, const Parameters<T>& params, const EncoderConfig& cfg,
              std::span<const T> d_cls, const Matrix<T>* d_sequence, Parameters<T>& grads);

// Sinusoidal position table, max_len x d_model.
template <typename T>
Matrix<T> positional_encoding(std::size_t max_len, std::size_t d_model);

}  // namespace cadtext
