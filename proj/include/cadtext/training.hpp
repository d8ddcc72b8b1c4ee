#pragma once

// Adam training loops for the pair, contrastive and masked-token objectives,
// per-epoch metrics, and the hyperparameter sweep harness.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cadtext/corpus.hpp"
#include "cadtext/model.hpp"
#include "cadtext/objectives.hpp"
#include "cadtext/sentence.hpp"
#include "cadtext/tokenizer.hpp"
#include "json.hpp"

namespace cadtext {

enum class Objective { Pair, Contrastive, Mlm };

std::string_view to_string(Objective o);
Objective parse_objective(std::string_view name);

struct TrainConfig {
  Objective objective = Objective::Pair;
  double learning_rate = 1e-3;
  std::size_t epochs = 10;
  std::size_t batch_size = 0;  // 0: 128 for contrastive, 64 otherwise
  std::size_t patience = 3;    // pair only; 0 disables early stopping
  std::uint64_t seed = 0;
  EncoderConfig encoder;       // dropout_p, max_len, output heads, frozen layers live here
  HeadConfig head;
  SentenceCase sentence_case = SentenceCase::Base;
  double neg_ratio = 1.0;
  MlmCorruption mlm;
  // Draw the MLM corruption once per example instead of every epoch.
  bool mlm_static_masking = false;
  std::size_t vocab_min_freq = 1;
  std::size_t vocab_max_size = 20000;
  // Zero-shot batch size used as the contrastive validation metric.
  std::size_t val_batch = 100;

  std::size_t effective_batch_size() const;
  // Throws ConfigError naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  // Flat keys override the defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochMetrics {
  double train_loss = 0;
  double train_accuracy = 0;
  double val_accuracy = 0;
  double seconds = 0;
};

struct MetricsHistory {
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;    // index into epochs of the returned model
  std::size_t skipped_steps = 0; // steps dropped for non-finite gradients
  std::string status = "ok";     // "ok", "early_stopped" or "diverged"

  // Wall-clock is left out unless requested so reruns compare byte-identical.
  nlohmann::json to_json(bool include_timing = false) const;
};

// ---- optimizer -----------------------------------------------------------

// Bias-corrected Adam update of one tensor at step t >= 1.
template <typename T>
void adam_update(std::span<T> w, std::span<const T> g, std::span<T> m, std::span<T> v, double lr,
                 std::size_t t, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

template <typename T>
struct AdamState {
  Model<T> m, v;
  std::size_t t = 0;
};

template <typename T>
AdamState<T> init_adam(const Model<T>& model);

// Applies one update to every trainable tensor. If any trainable gradient is
// non-finite the step is skipped (state untouched) and false is returned.
template <typename T>
bool adam_step(Model<T>& model, const Model<T>& grads, AdamState<T>& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// ---- training ------------------------------------------------------------

struct TrainData {
  std::vector<SentencePair> train_pairs, val_pairs;        // pair objective
  std::vector<AssemblyRecord> train_records, val_records;  // contrastive, mlm
};

// Texts the vocabulary is built from for this objective (training split only).
std::vector<std::string> vocabulary_texts(const TrainData& data, Objective objective);
Vocab build_training_vocab(const TrainData& data, const TrainConfig& cfg);

struct TrainResult {
  Model<float> model;  // best validation epoch (pair) or final (contrastive, mlm)
  MetricsHistory history;
};

using EpochCallback = std::function<void(std::size_t epoch, const EpochMetrics&)>;

// Starts from `init` when given (e.g. an MLM-pretrained encoder), otherwise
// from a fresh seeded model. Throws DataError for missing splits.
TrainResult train(const TrainData& data, const TrainConfig& cfg, const Vocab& vocab,
                  const Model<float>* init = nullptr, const EpochCallback& on_epoch = {});

// Validation accuracy on the held-out split in eval mode; no side effects.
double pair_accuracy(const Model<float>& model, const Vocab& vocab, const std::vector<SentencePair>& pairs);
double mlm_accuracy(const Model<float>& model, const Vocab& vocab, const std::vector<AssemblyRecord>& records,
                    const MlmCorruption& rule, std::uint64_t seed);

// Mean loss and parameter gradients on one fixed batch; drives the overfit
// smoke test and the gradient checks. `rng` supplies dropout and, for MLM,
// must be reset by the caller to reproduce the same corruption.
struct BatchInputs {
  std::vector<TokenSequence> first;   // pair: encoded pairs; contrastive: names; mlm: sequences
  std::vector<TokenSequence> second;  // contrastive: part lists
  std::vector<int> labels;            // pair
  std::vector<MlmExample> masked;     // mlm
};

template <typename T>
struct BatchOutcome {
  T loss = 0;
  std::size_t correct = 0, total = 0;
};

template <typename T>
BatchOutcome<T> batch_loss(const Model<T>& model, Objective objective, const BatchInputs& batch, Mode mode,
                           Rng* rng, Model<T>* grads);

// ---- sweep ---------------------------------------------------------------

struct SweepCell {
  double learning_rate = 1e-3;
  double dropout = 0.1;
  std::size_t max_len = 128;
  std::size_t heads = 0;
};

std::string variant_name(std::size_t heads);

struct SweepGrid {
  std::vector<std::size_t> heads = {0};
  std::vector<double> learning_rates = {1e-3};
  std::vector<double> dropouts = {0.1};
  std::vector<std::size_t> max_lens = {128};
  std::vector<std::uint64_t> seeds = {0};

  // heads x {1e-2, 1e-3, 1e-4} x {0, 0.1, 0.3} x {128, 256} with heads
  // {0 (base), 8, 32}.
  static SweepGrid table1();
  void validate() const;
  // heads outermost, then learning rate, dropout, max_len.
  std::vector<SweepCell> cells() const;
  nlohmann::json to_json() const;
  static SweepGrid from_json(const nlohmann::json& j);
};

struct SweepRow {
  SweepCell cell;
  double train_accuracy = 0;  // mean over seeds, at each run's returned epoch
  double val_accuracy = 0;
  std::string status = "ok";
};

// Runs every cell (times every seed) on `parallel` threads. A failing cell is
// recorded with its error status and does not stop the others. With a
// non-empty `out_dir`, each cell writes cell-<index>/metrics.json there.
std::vector<SweepRow> run_sweep(const SweepGrid& grid, const TrainConfig& base, const TrainData& data,
                                const Vocab& vocab, std::size_t parallel = 1,
                                const std::filesystem::path& out_dir = {});

// Columns: variant,lr,dropout,max_len,heads,train_acc,val_acc,status
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace cadtext
