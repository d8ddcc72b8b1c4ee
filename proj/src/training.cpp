#include "cadtext/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "cadtext/errors.hpp"
#include "cadtext/zeroshot.hpp"

namespace cadtext {

namespace {

const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      "objective",   "learning_rate", "epochs",        "batch_size",     "patience",
      "seed",        "dropout_p",     "max_len",       "output_attention_heads",
      "frozen_layers", "d_model",     "n_layers",      "n_heads",        "d_ff",
      "tau",         "learnable_tau", "d_embed",       "use_projection", "sentence_case",
      "neg_ratio",   "mask_rate",     "mask_prob",     "random_prob",    "mlm_static_masking",
      "vocab_min_freq", "vocab_max_size", "val_batch"};
  return keys;
}

template <typename T>
bool all_finite(const Matrix<T>& m) {
  for (T x : m.values())
    if (!std::isfinite(x)) return false;
  return true;
}

std::string format_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string format_acc(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<TokenSequence> encode_pairs(const std::vector<SentencePair>& pairs, const Vocab& vocab,
                                        std::size_t max_len) {
  std::vector<TokenSequence> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(encode_pair(p.sentence_a, p.sentence_b, vocab, max_len));
  return out;
}

TokenSequence mlm_sequence(const AssemblyRecord& r, const Vocab& vocab, std::size_t max_len) {
  return encode_pair(r.assembly_name, join_parts(r.part_names), vocab, max_len);
}

}  // namespace

std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::Pair: return "pair";
    case Objective::Contrastive: return "contrastive";
    case Objective::Mlm: return "mlm";
  }
  return "pair";
}

Objective parse_objective(std::string_view name) {
  if (name == "pair") return Objective::Pair;
  if (name == "contrastive") return Objective::Contrastive;
  if (name == "mlm") return Objective::Mlm;
  throw ConfigError("objective: unknown value '" + std::string(name) + "' (valid: pair, contrastive, mlm)");
}

std::size_t TrainConfig::effective_batch_size() const {
  if (batch_size) return batch_size;
  return objective == Objective::Contrastive ? 128 : 64;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be > 0 (got " + format_g(learning_rate) + ")");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  const std::size_t b = effective_batch_size();
  if (objective == Objective::Contrastive && b < 2)
    throw ConfigError("batch_size must be >= 2 for the contrastive objective");
  if (b < 1) throw ConfigError("batch_size must be >= 1");
  if (encoder.max_len != 128 && encoder.max_len != 256)
    throw ConfigError("max_len must be 128 or 256 (got " + std::to_string(encoder.max_len) + ")");
  if (!(encoder.dropout_p >= 0.0 && encoder.dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
  if (encoder.d_model == 0 || encoder.n_heads == 0 || encoder.d_model % encoder.n_heads != 0)
    throw ConfigError("n_heads must divide d_model");
  if (encoder.output_attention_heads && encoder.d_model % encoder.output_attention_heads != 0)
    throw ConfigError("output_attention_heads must divide d_model");
  if (encoder.frozen_layers > encoder.n_layers + (encoder.output_attention_heads ? 1 : 0))
    throw ConfigError("frozen_layers exceeds the number of layers");
  if (!(head.tau > 0.0)) throw ConfigError("tau must be > 0");
  if (head.d_embed == 0) throw ConfigError("d_embed must be > 0");
  if (!(neg_ratio > 0.0)) throw ConfigError("neg_ratio must be > 0");
  if (!(mlm.mask_rate > 0.0 && mlm.mask_rate <= 1.0)) throw ConfigError("mask_rate must lie in (0, 1]");
  if (!(mlm.mask_prob >= 0.0 && mlm.random_prob >= 0.0 && mlm.mask_prob + mlm.random_prob <= 1.0))
    throw ConfigError("mask_prob and random_prob must be >= 0 and sum to at most 1");
  if (vocab_max_size <= static_cast<std::size_t>(special::kCount))
    throw ConfigError("vocab_max_size must exceed the number of special tokens");
  if (val_batch < 2) throw ConfigError("val_batch must be >= 2");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"objective", to_string(objective)},
          {"learning_rate", learning_rate},
          {"epochs", epochs},
          {"batch_size", effective_batch_size()},
          {"patience", patience},
          {"seed", seed},
          {"dropout_p", encoder.dropout_p},
          {"max_len", encoder.max_len},
          {"output_attention_heads", encoder.output_attention_heads},
          {"frozen_layers", encoder.frozen_layers},
          {"d_model", encoder.d_model},
          {"n_layers", encoder.n_layers},
          {"n_heads", encoder.n_heads},
          {"d_ff", encoder.d_ff},
          {"tau", head.tau},
          {"learnable_tau", head.learnable_tau},
          {"d_embed", head.d_embed},
          {"use_projection", head.use_projection},
          {"sentence_case", to_string(sentence_case)},
          {"neg_ratio", neg_ratio},
          {"mask_rate", mlm.mask_rate},
          {"mask_prob", mlm.mask_prob},
          {"random_prob", mlm.random_prob},
          {"mlm_static_masking", mlm_static_masking},
          {"vocab_min_freq", vocab_min_freq},
          {"vocab_max_size", vocab_max_size},
          {"val_batch", val_batch}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known_config_keys().count(key)) throw ConfigError(key + ": unknown train config field");
  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string(key) + ": wrong type in train config");
    }
  };
  if (j.contains("objective")) {
    if (!j.at("objective").is_string()) throw ConfigError("objective: expected a string");
    c.objective = parse_objective(j.at("objective").get<std::string>());
  }
  if (j.contains("sentence_case")) {
    if (!j.at("sentence_case").is_string()) throw ConfigError("sentence_case: expected a string");
    c.sentence_case = parse_sentence_case(j.at("sentence_case").get<std::string>());
  }
  get("learning_rate", c.learning_rate);
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("patience", c.patience);
  get("seed", c.seed);
  get("dropout_p", c.encoder.dropout_p);
  get("max_len", c.encoder.max_len);
  get("output_attention_heads", c.encoder.output_attention_heads);
  get("frozen_layers", c.encoder.frozen_layers);
  get("d_model", c.encoder.d_model);
  get("n_layers", c.encoder.n_layers);
  get("n_heads", c.encoder.n_heads);
  get("d_ff", c.encoder.d_ff);
  get("tau", c.head.tau);
  get("learnable_tau", c.head.learnable_tau);
  get("d_embed", c.head.d_embed);
  get("use_projection", c.head.use_projection);
  get("neg_ratio", c.neg_ratio);
  get("mask_rate", c.mlm.mask_rate);
  get("mask_prob", c.mlm.mask_prob);
  get("random_prob", c.mlm.random_prob);
  get("mlm_static_masking", c.mlm_static_masking);
  get("vocab_min_freq", c.vocab_min_freq);
  get("vocab_max_size", c.vocab_max_size);
  get("val_batch", c.val_batch);
  return c;
}

nlohmann::json MetricsHistory::to_json(bool include_timing) const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json r = {{"train_loss", e.train_loss}, {"train_acc", e.train_accuracy}, {"val_acc", e.val_accuracy}};
    if (include_timing) r["seconds"] = e.seconds;
    rows.push_back(r);
  }
  return {{"epochs", rows}, {"best_epoch", best_epoch}, {"skipped_steps", skipped_steps}, {"status", status}};
}

// ---- optimizer -----------------------------------------------------------

template <typename T>
void adam_update(std::span<T> w, std::span<const T> g, std::span<T> m, std::span<T> v, double lr,
                 std::size_t t, double beta1, double beta2, double eps) {
  if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size())
    throw std::invalid_argument("adam_update: size mismatch");
  if (t == 0) throw std::invalid_argument("adam_update: step count starts at 1");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = static_cast<double>(g[i]);
    const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
    const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
  }
}

template <typename T>
AdamState<T> init_adam(const Model<T>& model) {
  return {zeros_like(model), zeros_like(model), 0};
}

template <typename T>
bool adam_step(Model<T>& model, const Model<T>& grads, AdamState<T>& state, double lr, double beta1,
               double beta2, double eps) {
  std::vector<std::pair<Matrix<T>*, bool>> params;
  std::vector<const Matrix<T>*> gs;
  std::vector<Matrix<T>*> ms, vs;
  for_each_tensor<T>(model, [&](const std::string&, Matrix<T>& x, bool trainable) { params.push_back({&x, trainable}); });
  for_each_tensor<T>(grads, [&](const std::string&, const Matrix<T>& x, bool) { gs.push_back(&x); });
  for_each_tensor<T>(state.m, [&](const std::string&, Matrix<T>& x, bool) { ms.push_back(&x); });
  for_each_tensor<T>(state.v, [&](const std::string&, Matrix<T>& x, bool) { vs.push_back(&x); });
  if (gs.size() != params.size() || ms.size() != params.size() || vs.size() != params.size())
    throw std::invalid_argument("adam_step: model, gradient and state layouts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].first->same_shape(*gs[i])) throw std::invalid_argument("adam_step: gradient shape mismatch");
    if (params[i].second && !all_finite(*gs[i])) return false;
  }
  ++state.t;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].second) continue;
    adam_update<T>(params[i].first->values(), gs[i]->values(), ms[i]->values(), vs[i]->values(), lr, state.t,
                   beta1, beta2, eps);
  }
  return true;
}

// ---- batch loss ----------------------------------------------------------

template <typename T>
BatchOutcome<T> batch_loss(const Model<T>& model, Objective objective, const BatchInputs& batch, Mode mode,
                           Rng* rng, Model<T>* grads) {
  BatchOutcome<T> out;
  const bool want_grads = grads != nullptr;
  const std::size_t d = model.encoder.d_model;

  if (objective == Objective::Pair) {
    const std::size_t b = batch.first.size();
    if (batch.labels.size() != b) throw std::invalid_argument("batch_loss: labels and pairs differ in count");
    const T weight = T(1) / static_cast<T>(b);
    Heads<T> scratch = zeros_like(model.heads);
    std::vector<T> d_cls(d);
    for (std::size_t i = 0; i < b; ++i) {
      ForwardCache<T> cache;
      const auto enc = forward<T>(batch.first[i], model.params, model.encoder, mode, rng,
                                  want_grads ? &cache : nullptr);
      const std::span<const T> cls(enc.cls_state);
      const T loss = pair_loss_backward<T>(cls, batch.labels[i], model.heads, weight,
                                           want_grads ? grads->heads : scratch, d_cls);
      out.loss += loss * weight;
      out.correct += (pair_probability<T>(cls, model.heads) >= T(0.5)) == (batch.labels[i] == 1);
      if (want_grads) backward<T>(cache, model.params, model.encoder, d_cls, nullptr, grads->params);
    }
    out.total = b;
    return out;
  }

  if (objective == Objective::Contrastive) {
    const std::size_t b = batch.first.size();
    if (batch.second.size() != b) throw std::invalid_argument("batch_loss: names and parts differ in count");
    const std::size_t width = model.head.use_projection ? model.head.d_embed : d;
    Matrix<T> a(b, width), p(b, width);
    std::vector<ForwardCache<T>> fa(want_grads ? b : 0), fp(want_grads ? b : 0);
    std::vector<EmbedCache<T>> ea(b), ep(b);
    for (std::size_t i = 0; i < b; ++i) {
      const auto ra = forward<T>(batch.first[i], model.params, model.encoder, mode, rng, want_grads ? &fa[i] : nullptr);
      const auto va = contrastive_embed<T>(ra.cls_state, model.heads, model.head, &ea[i]);
      std::copy(va.begin(), va.end(), a.row(i).begin());
      const auto rp = forward<T>(batch.second[i], model.params, model.encoder, mode, rng, want_grads ? &fp[i] : nullptr);
      const auto vp = contrastive_embed<T>(rp.cls_state, model.heads, model.head, &ep[i]);
      std::copy(vp.begin(), vp.end(), p.row(i).begin());
    }
    auto res = contrastive_loss<T>(a, p, model.heads.tau(), want_grads);
    out.loss = res.loss;
    out.total = b;
    // Accuracy in the evaluation direction: each part list picks a name.
    for (std::size_t j = 0; j < b; ++j) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < b; ++i)
        if (res.logits(i, j) > res.logits(best, j)) best = i;
      out.correct += best == j;
    }
    if (!want_grads) return out;
    if (model.head.learnable_tau) grads->heads.log_tau.data()[0] += res.d_log_tau;
    for (std::size_t i = 0; i < b; ++i) {
      const auto dca = contrastive_embed_backward<T>(ea[i], res.d_a.row(i), model.heads, model.head, grads->heads);
      backward<T>(fa[i], model.params, model.encoder, dca, nullptr, grads->params);
      const auto dcp = contrastive_embed_backward<T>(ep[i], res.d_p.row(i), model.heads, model.head, grads->heads);
      backward<T>(fp[i], model.params, model.encoder, dcp, nullptr, grads->params);
    }
    return out;
  }

  const std::size_t b = batch.masked.size();
  const T weight = T(1) / static_cast<T>(b);
  Matrix<T>* d_embedding =
      want_grads && !model.encoder.embeddings_frozen() ? &grads->params.token_embedding : nullptr;
  const std::vector<T> zero_cls(d, T(0));
  for (const auto& ex : batch.masked) {
    ForwardCache<T> cache;
    const auto enc = forward<T>(ex.tokens, model.params, model.encoder, mode, rng, want_grads ? &cache : nullptr);
    Matrix<T> d_states(want_grads ? enc.sequence_states.rows() : 0, want_grads ? d : 0);
    const T loss = mlm_loss<T>(enc.sequence_states, ex.positions, ex.targets, model.params.token_embedding, weight,
                               want_grads ? &d_states : nullptr, d_embedding, &out.correct);
    out.loss += loss * weight;
    out.total += ex.positions.size();
    if (want_grads) backward<T>(cache, model.params, model.encoder, zero_cls, &d_states, grads->params);
  }
  return out;
}

// ---- training ------------------------------------------------------------

std::vector<std::string> vocabulary_texts(const TrainData& data, Objective objective) {
  std::vector<std::string> texts;
  if (objective == Objective::Pair) {
    for (const auto& p : data.train_pairs) {
      texts.push_back(p.sentence_a);
      texts.push_back(p.sentence_b);
    }
  } else {
    for (const auto& r : data.train_records) {
      texts.push_back(r.assembly_name);
      texts.push_back(join_parts(r.part_names));
    }
  }
  return texts;
}

Vocab build_training_vocab(const TrainData& data, const TrainConfig& cfg) {
  return Vocab::build(vocabulary_texts(data, cfg.objective), cfg.vocab_min_freq, cfg.vocab_max_size);
}

double pair_accuracy(const Model<float>& model, const Vocab& vocab, const std::vector<SentencePair>& pairs) {
  if (pairs.empty()) return 0.0;
  const long long n = static_cast<long long>(pairs.size());
  std::vector<std::uint8_t> hit(pairs.size(), 0);
#pragma omp parallel for schedule(dynamic, 16)
  for (long long i = 0; i < n; ++i) {
    const auto& p = pairs[static_cast<std::size_t>(i)];
    const auto seq = encode_pair(p.sentence_a, p.sentence_b, vocab, model.encoder.max_len);
    const auto enc = forward<float>(seq, model.params, model.encoder, Mode::Eval, nullptr);
    const float prob = pair_probability<float>(enc.cls_state, model.heads);
    hit[static_cast<std::size_t>(i)] = (prob >= 0.5f) == (p.label == 1);
  }
  return static_cast<double>(std::accumulate(hit.begin(), hit.end(), std::size_t{0})) /
         static_cast<double>(pairs.size());
}

double mlm_accuracy(const Model<float>& model, const Vocab& vocab, const std::vector<AssemblyRecord>& records,
                    const MlmCorruption& rule, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<MlmExample> examples;
  examples.reserve(records.size());
  for (const auto& r : records)
    examples.push_back(mlm_corrupt(mlm_sequence(r, vocab, model.encoder.max_len), vocab.size(), rng, rule));
  std::vector<std::size_t> correct(examples.size(), 0);
  const long long n = static_cast<long long>(examples.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (long long i = 0; i < n; ++i) {
    const auto& ex = examples[static_cast<std::size_t>(i)];
    const auto enc = forward<float>(ex.tokens, model.params, model.encoder, Mode::Eval, nullptr);
    mlm_loss<float>(enc.sequence_states, ex.positions, ex.targets, model.params.token_embedding, 1.0f, nullptr,
                    nullptr, &correct[static_cast<std::size_t>(i)]);
  }
  std::size_t total = 0;
  for (const auto& ex : examples) total += ex.positions.size();
  if (total == 0) return 0.0;
  return static_cast<double>(std::accumulate(correct.begin(), correct.end(), std::size_t{0})) /
         static_cast<double>(total);
}

TrainResult train(const TrainData& data, const TrainConfig& cfg, const Vocab& vocab, const Model<float>* init,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  const bool pair = cfg.objective == Objective::Pair;
  const bool contrastive = cfg.objective == Objective::Contrastive;
  if (pair && data.train_pairs.empty()) throw DataError("pair objective needs a non-empty training set");
  if (pair && data.val_pairs.empty()) throw DataError("pair objective needs a validation set");
  if (!pair && data.train_records.empty()) throw DataError("training set is empty");
  if (contrastive && data.train_records.size() < 2)
    throw DataError("contrastive objective needs at least 2 training records");

  TrainResult result;
  EncoderConfig enc = cfg.encoder;
  enc.vocab_size = vocab.size();
  if (init) {
    const auto& e = init->encoder;
    if (e.vocab_size != enc.vocab_size || e.d_model != enc.d_model || e.n_layers != enc.n_layers ||
        e.n_heads != enc.n_heads || e.d_ff != enc.d_ff || e.output_attention_heads != enc.output_attention_heads)
      throw ConfigError("initial checkpoint architecture does not match the train config");
    result.model = *init;
    result.model.encoder.dropout_p = enc.dropout_p;
    result.model.encoder.frozen_layers = enc.frozen_layers;
    result.model.encoder.max_len = std::max(e.max_len, enc.max_len);
    result.model.head = cfg.head;
    // Heads are rebuilt when the projection width changed.
    if (result.model.heads.proj_w.cols() != cfg.head.d_embed)
      result.model.heads = init_heads<float>(enc.d_model, cfg.head, cfg.seed);
    result.model.heads.log_tau.data()[0] = static_cast<float>(std::log(cfg.head.tau));
  } else {
    enc.seed = cfg.seed;
    result.model = init_model<float>(enc, cfg.head);
  }
  result.model.encoder.validate();
  auto& model = result.model;
  const std::size_t max_len = cfg.encoder.max_len;

  // Pre-encode everything once.
  std::vector<TokenSequence> first, second;
  std::vector<int> labels;
  std::vector<MlmExample> static_masks;
  Rng rng(Rng::mix(cfg.seed ^ 0x747261696e696e67ULL));
  std::size_t n = 0;
  if (pair) {
    first = encode_pairs(data.train_pairs, vocab, max_len);
    for (const auto& p : data.train_pairs) labels.push_back(p.label);
    n = first.size();
  } else {
    for (const auto& r : data.train_records) {
      if (contrastive) {
        first.push_back(encode_single(r.assembly_name, vocab, max_len));
        second.push_back(encode_single(join_parts(r.part_names), vocab, max_len));
      } else {
        first.push_back(mlm_sequence(r, vocab, max_len));
      }
    }
    n = first.size();
    if (cfg.objective == Objective::Mlm && cfg.mlm_static_masking)
      for (const auto& s : first) static_masks.push_back(mlm_corrupt(s, vocab.size(), rng, cfg.mlm));
  }

  const std::size_t batch_size = cfg.effective_batch_size();
  AdamState<float> adam = init_adam(model);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  double best_val = -1.0;
  std::size_t since_best = 0;
  Model<float> best_model;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0;
    std::size_t loss_count = 0, correct = 0, total = 0;
    bool diverged = false;
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t end = std::min(n, start + batch_size);
      if (contrastive && end - start < 2) break;
      BatchInputs batch;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        if (pair) {
          batch.first.push_back(first[i]);
          batch.labels.push_back(labels[i]);
        } else if (contrastive) {
          batch.first.push_back(first[i]);
          batch.second.push_back(second[i]);
        } else {
          batch.masked.push_back(cfg.mlm_static_masking ? static_masks[i]
                                                        : mlm_corrupt(first[i], vocab.size(), rng, cfg.mlm));
        }
      }
      Model<float> grads = zeros_like(model);
      const auto outcome = batch_loss<float>(model, cfg.objective, batch, Mode::Train, &rng, &grads);
      if (!std::isfinite(outcome.loss)) {
        diverged = true;
        break;
      }
      loss_sum += static_cast<double>(outcome.loss) * static_cast<double>(end - start);
      loss_count += end - start;
      correct += outcome.correct;
      total += outcome.total;
      if (!adam_step(model, grads, adam, cfg.learning_rate)) ++result.history.skipped_steps;
    }

    EpochMetrics m;
    m.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    m.train_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    if (diverged) {
      m.train_loss = std::nan("");
      m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.history.epochs.push_back(m);
      result.history.status = "diverged";
      break;
    }
    if (pair) {
      m.val_accuracy = pair_accuracy(model, vocab, data.val_pairs);
    } else if (contrastive) {
      if (data.val_records.size() >= 2) {
        EvalOptions eo;
        eo.batch_size = std::min(cfg.val_batch, data.val_records.size());
        eo.seed = cfg.seed;
        eo.max_len = max_len;
        m.val_accuracy = evaluate(model, vocab, data.val_records, eo).top1;
      }
    } else if (!data.val_records.empty()) {
      m.val_accuracy = mlm_accuracy(model, vocab, data.val_records, cfg.mlm, cfg.seed);
    }
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(m);
    if (on_epoch) on_epoch(epoch, m);

    if (pair) {
      if (m.val_accuracy > best_val) {
        best_val = m.val_accuracy;
        best_model = model;
        result.history.best_epoch = epoch;
        since_best = 0;
      } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
        result.history.status = "early_stopped";
        break;
      }
    } else {
      result.history.best_epoch = epoch;
    }
  }
  if (pair && best_val >= 0.0) result.model = std::move(best_model);
  return result;
}

// ---- sweep ---------------------------------------------------------------

std::string variant_name(std::size_t heads) { return heads == 0 ? "base" : "attn" + std::to_string(heads); }

SweepGrid SweepGrid::table1() {
  SweepGrid g;
  g.heads = {0, 8, 32};
  g.learning_rates = {1e-2, 1e-3, 1e-4};
  g.dropouts = {0.0, 0.1, 0.3};
  g.max_lens = {128, 256};
  g.seeds = {0};
  return g;
}

void SweepGrid::validate() const {
  if (heads.empty() || learning_rates.empty() || dropouts.empty() || max_lens.empty() || seeds.empty())
    throw ConfigError("sweep grid axes must be non-empty");
  for (double lr : learning_rates)
    if (!(lr > 0.0)) throw ConfigError("learning_rate must be > 0 in every sweep cell");
  for (double p : dropouts)
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1) in every sweep cell");
}

std::vector<SweepCell> SweepGrid::cells() const {
  std::vector<SweepCell> out;
  for (auto h : heads)
    for (double lr : learning_rates)
      for (double p : dropouts)
        for (auto len : max_lens) out.push_back({lr, p, len, h});
  return out;
}

nlohmann::json SweepGrid::to_json() const {
  return {{"heads", heads}, {"learning_rate", learning_rates}, {"dropout_p", dropouts},
          {"max_len", max_lens}, {"seeds", seeds}};
}

SweepGrid SweepGrid::from_json(const nlohmann::json& j) {
  SweepGrid g;
  try {
    if (j.contains("heads")) g.heads = j.at("heads").get<std::vector<std::size_t>>();
    if (j.contains("learning_rate")) g.learning_rates = j.at("learning_rate").get<std::vector<double>>();
    if (j.contains("dropout_p")) g.dropouts = j.at("dropout_p").get<std::vector<double>>();
    if (j.contains("max_len")) g.max_lens = j.at("max_len").get<std::vector<std::size_t>>();
    if (j.contains("seeds")) g.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid sweep grid: ") + e.what());
  }
  g.validate();
  return g;
}

std::vector<SweepRow> run_sweep(const SweepGrid& grid, const TrainConfig& base, const TrainData& data,
                                const Vocab& vocab, std::size_t parallel, const std::filesystem::path& out_dir) {
  grid.validate();
  const auto cells = grid.cells();
  const std::size_t n_seeds = grid.seeds.size();
  const std::size_t n_tasks = cells.size() * n_seeds;
  struct TaskResult {
    MetricsHistory history;
    std::string error;
  };
  std::vector<TaskResult> results(n_tasks);

  const long long nt = static_cast<long long>(n_tasks);
#pragma omp parallel for schedule(dynamic, 1) num_threads(static_cast<int>(std::max<std::size_t>(parallel, 1)))
  for (long long t = 0; t < nt; ++t) {
    const auto& cell = cells[static_cast<std::size_t>(t) / n_seeds];
    TrainConfig cfg = base;
    cfg.learning_rate = cell.learning_rate;
    cfg.encoder.dropout_p = cell.dropout;
    cfg.encoder.max_len = cell.max_len;
    cfg.encoder.output_attention_heads = cell.heads;
    cfg.seed = grid.seeds[static_cast<std::size_t>(t) % n_seeds];
    auto& r = results[static_cast<std::size_t>(t)];
    try {
      r.history = train(data, cfg, vocab).history;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
  }

  std::vector<SweepRow> rows;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    SweepRow row;
    row.cell = cells[c];
    std::size_t ok = 0;
    nlohmann::json cell_json = {{"variant", variant_name(cells[c].heads)},
                                {"learning_rate", cells[c].learning_rate},
                                {"dropout_p", cells[c].dropout},
                                {"max_len", cells[c].max_len},
                                {"heads", cells[c].heads},
                                {"runs", nlohmann::json::array()}};
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const auto& r = results[c * n_seeds + s];
      nlohmann::json run = {{"seed", grid.seeds[s]}};
      if (!r.error.empty()) {
        row.status = "failed: " + r.error;
        run["error"] = r.error;
      } else if (r.history.status == "diverged") {
        row.status = "diverged";
        run["metrics"] = r.history.to_json();
      } else {
        const auto& e = r.history.epochs.at(r.history.best_epoch);
        row.train_accuracy += e.train_accuracy;
        row.val_accuracy += e.val_accuracy;
        ++ok;
        run["metrics"] = r.history.to_json();
      }
      cell_json["runs"].push_back(run);
    }
    if (ok) {
      row.train_accuracy /= static_cast<double>(ok);
      row.val_accuracy /= static_cast<double>(ok);
    }
    if (!out_dir.empty()) {
      const auto dir = out_dir / ("cell-" + std::to_string(c));
      std::filesystem::create_directories(dir);
      std::ofstream f(dir / "metrics.json", std::ios::binary);
      f << cell_json.dump(2) << '\n';
      if (!f) throw RuntimeFailure("cannot write sweep cell output in " + dir.string());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "variant,lr,dropout,max_len,heads,train_acc,val_acc,status\n";
  for (const auto& r : rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out += variant_name(r.cell.heads) + "," + format_g(r.cell.learning_rate) + "," + format_g(r.cell.dropout) + "," +
           std::to_string(r.cell.max_len) + "," + std::to_string(r.cell.heads) + "," + format_acc(r.train_accuracy) +
           "," + format_acc(r.val_accuracy) + "," + status + "\n";
  }
  return out;
}

#define CADTEXT_INSTANTIATE(T)                                                                                 \
  template void adam_update<T>(std::span<T>, std::span<const T>, std::span<T>, std::span<T>, double,           \
                               std::size_t, double, double, double);                                           \
  template AdamState<T> init_adam<T>(const Model<T>&);                                                         \
  template bool adam_step<T>(Model<T>&, const Model<T>&, AdamState<T>&, double, double, double, double);       \
  template BatchOutcome<T> batch_loss<T>(const Model<T>&, Objective, const BatchInputs&, Mode, Rng*, Model<T>*);

CADTEXT_INSTANTIATE(float)
CADTEXT_INSTANTIATE(double)

#undef CADTEXT_INSTANTIATE

}  // namespace cadtext
