#include "cadtext/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "cadtext/corpus.hpp"
#include "cadtext/errors.hpp"
#include "cadtext/model.hpp"
#include "cadtext/sentence.hpp"
#include "cadtext/synthlab.hpp"
#include "cadtext/training.hpp"
#include "cadtext/zeroshot.hpp"

namespace fs = std::filesystem;

namespace cadtext::cli {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json read_json_file(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(std::string("cannot open ") + what + ": " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(what) + " " + path.string() + " is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path require_file(const std::string& raw, const char* what) {
  const fs::path p = resolve_input(raw);
  if (!fs::is_regular_file(p)) throw DataError(std::string(what) + " not found: " + raw);
  return p;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

fs::path sibling(const fs::path& path, const std::string& suffix) { return fs::path(path.string() + suffix); }

std::vector<AssemblyRecord> load_records(const fs::path& path, std::ostream& out) {
  auto loaded = load_corpus(path);
  if (!loaded.errors.empty()) {
    out << "warning: " << loaded.errors.size() << " malformed line(s) skipped in " << path.string()
        << " (first at line " << loaded.errors.front().line << ": " << loaded.errors.front().message << ")\n";
  }
  return std::move(loaded.records);
}

// ---- preprocess ---------------------------------------------------------

struct PreprocessArgs {
  std::string in, out, rules, stats_out, errors_out;
};

int cmd_preprocess(const PreprocessArgs& a, std::ostream& out) {
  const auto t0 = Clock::now();
  const fs::path in = require_file(a.in, "input corpus");
  const CleaningRules rules =
      a.rules.empty() ? CleaningRules::defaults() : CleaningRules::from_json(read_json_file(a.rules, "rules file"));
  const fs::path out_path = a.out;
  const fs::path stats_path = a.stats_out.empty() ? sibling(out_path, ".stats.json") : fs::path(a.stats_out);
  const fs::path errors_path = a.errors_out.empty() ? sibling(out_path, ".errors.txt") : fs::path(a.errors_out);

  auto loaded = load_corpus(in);
  const auto cleaned = clean_corpus(loaded.records, rules);
  const auto deduped = dedup_corpus(cleaned);
  const auto stats = compute_stats(loaded.records, deduped);

  ensure_parent(out_path);
  save_corpus(out_path, deduped);
  nlohmann::json stats_json = stats.to_json();
  stats_json["n_malformed_lines"] = loaded.errors.size();
  stats_json["n_after_clean"] = cleaned.size();
  write_json(stats_path, stats_json);
  std::string errors;
  for (const auto& e : loaded.errors) errors += "line " + std::to_string(e.line) + ": " + e.message + "\n";
  write_text(errors_path, errors);

  out << "preprocess: " << stats.n_raw << " raw -> " << cleaned.size() << " cleaned -> " << deduped.size()
      << " unique records (" << stats.n_unique_assembly_names << " distinct names, " << loaded.errors.size()
      << " malformed lines)\n";

  RunManifest m;
  m.command = "preprocess";
  m.config = {{"rules", rules.to_json()}};
  m.inputs = {{"corpus", in.string()}};
  if (!a.rules.empty()) m.inputs["rules"] = a.rules;
  m.outputs = {{"corpus", out_path.string()}, {"stats", stats_path.string()}, {"errors", errors_path.string()}};
  m.wall_clock_seconds = seconds_since(t0);
  m.write(sibling(out_path, ".manifest.json"));
  return kOk;
}

// ---- make-pairs ---------------------------------------------------------

struct MakePairsArgs {
  std::string in, out, sentence_case = "base";
  double neg_ratio = 1.0;
  std::uint64_t seed = 0;
};

int cmd_make_pairs(const MakePairsArgs& a, std::ostream& out) {
  const auto t0 = Clock::now();
  const SentenceCase c = parse_sentence_case(a.sentence_case);
  if (!(a.neg_ratio > 0.0)) throw ConfigError("--neg-ratio must be > 0");
  const fs::path in = require_file(a.in, "input corpus");
  const auto records = load_records(in, out);
  if (c == SentenceCase::Case4 &&
      std::none_of(records.begin(), records.end(), [](const AssemblyRecord& r) { return r.description.has_value(); }))
    throw DataError("case4 needs assembly descriptions, and none of the " + std::to_string(records.size()) +
                    " input records has one");
  const auto ds = build_pair_dataset(records, c, a.neg_ratio, a.seed);
  ensure_parent(a.out);
  save_pairs(a.out, ds.pairs);
  const auto positives = std::count_if(ds.pairs.begin(), ds.pairs.end(), [](const SentencePair& p) { return p.label == 1; });
  out << "make-pairs: " << ds.pairs.size() << " pairs (" << positives << " positive), " << ds.skipped_records
      << " records skipped for " << to_string(c) << "\n";

  RunManifest m;
  m.command = "make-pairs";
  m.config = {{"case", to_string(c)}, {"neg_ratio", a.neg_ratio}, {"skipped_records", ds.skipped_records}};
  m.seed = a.seed;
  m.inputs = {{"corpus", in.string()}};
  m.outputs = {{"pairs", a.out}};
  m.wall_clock_seconds = seconds_since(t0);
  m.write(sibling(a.out, ".manifest.json"));
  return kOk;
}

// ---- train / sweep shared ----------------------------------------------

struct TrainArgs {
  std::string config, data, out, init;
  std::optional<std::string> objective, sentence_case;
  std::optional<double> lr, dropout, tau, neg_ratio;
  std::optional<std::size_t> epochs, batch_size, max_len, heads, frozen_layers, patience;
  std::optional<std::uint64_t> seed;
  double val_fraction = 0.1, test_fraction = 0.1;
};

TrainConfig resolve_config(const TrainArgs& a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : TrainConfig::from_json(read_json_file(a.config, "config"));
  if (a.objective) cfg.objective = parse_objective(*a.objective);
  if (a.sentence_case) cfg.sentence_case = parse_sentence_case(*a.sentence_case);
  if (a.lr) cfg.learning_rate = *a.lr;
  if (a.dropout) cfg.encoder.dropout_p = *a.dropout;
  if (a.tau) cfg.head.tau = *a.tau;
  if (a.neg_ratio) cfg.neg_ratio = *a.neg_ratio;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.max_len) cfg.encoder.max_len = *a.max_len;
  if (a.heads) cfg.encoder.output_attention_heads = *a.heads;
  if (a.frozen_layers) cfg.encoder.frozen_layers = *a.frozen_layers;
  if (a.patience) cfg.patience = *a.patience;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  return cfg;
}

SplitSpec resolve_split(const TrainArgs& a, std::uint64_t seed) {
  SplitSpec s;
  s.val_fraction = a.val_fraction;
  s.test_fraction = a.test_fraction;
  s.train_fraction = 1.0 - a.val_fraction - a.test_fraction;
  s.seed = seed;
  s.validate();
  return s;
}

// Splits the corpus by record, then builds objective inputs per split so no
// record contributes to both training and validation.
TrainData prepare_data(const std::vector<AssemblyRecord>& records, const TrainConfig& cfg, const Splits& splits) {
  TrainData data;
  data.train_records = splits.train;
  data.val_records = splits.val;
  if (cfg.objective == Objective::Pair) {
    if (splits.train.size() < 2 || splits.val.size() < 2)
      throw DataError("pair training needs at least 2 train and 2 validation records (corpus has " +
                      std::to_string(records.size()) + ")");
    data.train_pairs = build_pair_dataset(splits.train, cfg.sentence_case, cfg.neg_ratio, cfg.seed).pairs;
    data.val_pairs = build_pair_dataset(splits.val, cfg.sentence_case, cfg.neg_ratio, cfg.seed + 1).pairs;
    if (data.train_pairs.empty() || data.val_pairs.empty())
      throw DataError("no records are eligible for " + std::string(to_string(cfg.sentence_case)));
  }
  return data;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const auto t0 = Clock::now();
  const TrainConfig cfg = resolve_config(a);
  const SplitSpec split = resolve_split(a, cfg.seed);
  const fs::path data_path = require_file(a.data, "training corpus");
  std::optional<Checkpoint> init;
  if (!a.init.empty()) init = load_checkpoint(require_file(a.init, "initial checkpoint"));

  const auto records = load_records(data_path, out);
  const auto splits = split_corpus(records, split);
  const TrainData data = prepare_data(records, cfg, splits);
  const Vocab vocab = init ? init->vocab : build_training_vocab(data, cfg);
  out << "train: objective " << to_string(cfg.objective) << ", " << splits.train.size() << "/" << splits.val.size()
      << "/" << splits.test.size() << " records, vocabulary " << vocab.size() << "\n";

  const fs::path dir = a.out;
  fs::create_directories(dir);
  const auto result = train(data, cfg, vocab, init ? &init->model : nullptr,
                            [&](std::size_t epoch, const EpochMetrics& m) {
                              out << "epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << m.train_loss
                                  << " train_acc " << m.train_accuracy << " val_acc " << m.val_accuracy << " ("
                                  << m.seconds << " s)\n";
                            });

  const nlohmann::json metadata = {{"objective", to_string(cfg.objective)},
                                   {"train_config", cfg.to_json()},
                                   {"best_epoch", result.history.best_epoch},
                                   {"status", result.history.status}};
  save_checkpoint(dir / "checkpoint.bin", result.model, vocab, metadata);
  write_json(dir / "metrics.json", result.history.to_json());
  write_json(dir / "config.json", cfg.to_json());
  vocab.save(dir / "vocab.txt");
  save_corpus(dir / "train.jsonl", splits.train);
  save_corpus(dir / "val.jsonl", splits.val);
  save_corpus(dir / "test.jsonl", splits.test);

  RunManifest m;
  m.command = "train";
  m.config = cfg.to_json();
  m.config["split"] = {{"train", split.train_fraction}, {"val", split.val_fraction}, {"test", split.test_fraction}};
  m.seed = cfg.seed;
  m.inputs = {{"data", data_path.string()}};
  if (!a.init.empty()) m.inputs["init"] = a.init;
  if (!a.config.empty()) m.inputs["config"] = a.config;
  for (const char* f : {"checkpoint.bin", "metrics.json", "config.json", "vocab.txt", "train.jsonl", "val.jsonl", "test.jsonl"})
    m.outputs[f] = (dir / f).string();
  m.wall_clock_seconds = seconds_since(t0);
  auto manifest = m.to_json();
  manifest["epoch_seconds"] = nlohmann::json::array();
  for (const auto& e : result.history.epochs) manifest["epoch_seconds"].push_back(e.seconds);
  write_json(dir / "manifest.json", manifest);

  if (result.history.status == "diverged") {
    out << "train: loss became non-finite; run aborted (outputs hold the last finite model)\n";
    throw RuntimeFailure("training diverged");
  }
  const auto& best = result.history.epochs.at(result.history.best_epoch);
  out << "train: done, epoch " << result.history.best_epoch + 1 << " kept (val_acc " << best.val_accuracy << ")\n";
  return kOk;
}

struct SweepArgs {
  TrainArgs train;
  std::string grid;
  bool table1 = false;
  std::size_t parallel = 1;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  const auto t0 = Clock::now();
  const TrainConfig base = resolve_config(a.train);
  const SweepGrid grid = a.table1        ? SweepGrid::table1()
                         : a.grid.empty() ? SweepGrid{}
                                          : SweepGrid::from_json(read_json_file(a.grid, "grid file"));
  grid.validate();
  if (a.parallel == 0) throw ConfigError("--parallel must be >= 1");
  const SplitSpec split = resolve_split(a.train, base.seed);
  const fs::path data_path = require_file(a.train.data, "training corpus");
  const auto records = load_records(data_path, out);
  const auto splits = split_corpus(records, split);
  const TrainData data = prepare_data(records, base, splits);
  const Vocab vocab = build_training_vocab(data, base);

  const fs::path dir = a.train.out;
  fs::create_directories(dir);
  out << "sweep: " << grid.cells().size() << " cells x " << grid.seeds.size() << " seeds on " << a.parallel
      << " thread(s)\n";
  const auto rows = run_sweep(grid, base, data, vocab, a.parallel, dir / "cells");
  write_text(dir / "sweep.csv", sweep_csv(rows));
  vocab.save(dir / "vocab.txt");
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.status != "ok";
  out << "sweep: wrote " << rows.size() << " rows, " << failed << " cell(s) not ok\n";

  RunManifest m;
  m.command = "sweep";
  m.config = {{"base", base.to_json()}, {"grid", grid.to_json()}, {"parallel", a.parallel}};
  m.seed = base.seed;
  m.inputs = {{"data", data_path.string()}};
  if (!a.grid.empty()) m.inputs["grid"] = a.grid;
  m.outputs = {{"table", (dir / "sweep.csv").string()}, {"cells", (dir / "cells").string()},
               {"vocab", (dir / "vocab.txt").string()}};
  m.wall_clock_seconds = seconds_since(t0);
  m.write(dir / "manifest.json");
  return kOk;
}

// ---- eval-zeroshot ------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, test, report, export_sim;
  std::size_t n = 100;
  std::uint64_t seed = 0;
  std::size_t max_len = 0;
  std::size_t export_limit = 0;
  bool raw_cls = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto t0 = Clock::now();
  if (a.n == 0) throw ConfigError("--n must be >= 1");
  const fs::path ck_path = require_file(a.checkpoint, "checkpoint");
  const fs::path test_path = require_file(a.test, "test corpus");
  auto ck = load_checkpoint(ck_path);
  if (a.raw_cls) ck.model.head.use_projection = false;
  const std::size_t max_len = a.max_len ? a.max_len : ck.model.encoder.max_len;
  if (max_len > ck.model.encoder.max_len)
    throw ConfigError("--max-len " + std::to_string(max_len) + " exceeds the checkpoint's positional table (" +
                      std::to_string(ck.model.encoder.max_len) + "); the encoder was built for at most that length");
  const auto records = load_records(test_path, out);

  EvalOptions opts{a.n, a.seed, max_len};
  std::vector<SimilarityMatrix> matrices;
  const bool exporting = !a.export_sim.empty();
  const auto report = evaluate(ck.model, ck.vocab, records, opts, exporting ? &matrices : nullptr);
  ensure_parent(a.report);
  write_json(a.report, report.to_json());

  RunManifest m;
  m.command = "eval-zeroshot";
  m.config = {{"n", a.n}, {"max_len", max_len}, {"raw_cls", a.raw_cls}, {"export_limit", a.export_limit}};
  m.seed = a.seed;
  m.inputs = {{"checkpoint", ck_path.string()}, {"test", test_path.string()}};
  m.outputs = {{"report", a.report}};
  if (exporting) {
    const fs::path dir = a.export_sim;
    fs::create_directories(dir);
    const std::size_t limit = a.export_limit ? std::min(a.export_limit, matrices.size()) : matrices.size();
    for (std::size_t b = 0; b < limit; ++b) {
      const std::string stem = "batch-" + std::to_string(b);
      export_similarity_csv(matrices[b], dir / (stem + ".csv"));
      export_similarity_pgm(matrices[b].scores, dir / (stem + ".pgm"));
    }
    m.outputs["similarity"] = dir.string();
  }
  out << "eval-zeroshot: " << report.n_batches << " batches of " << a.n << ", top-1 " << report.top1 << ", top-5 "
      << report.top5 << ", top-10 " << report.top10 << "\n";
  m.wall_clock_seconds = seconds_since(t0);
  m.write(sibling(a.report, ".manifest.json"));
  return kOk;
}

// ---- generate-synth -----------------------------------------------------

struct SynthArgs {
  std::string out, spec;
  std::optional<std::size_t> n, min_parts, max_parts;
  std::optional<double> overlap;
  std::optional<std::uint64_t> seed;
  bool descriptions = false;
};

int cmd_generate_synth(const SynthArgs& a, std::ostream& out) {
  const auto t0 = Clock::now();
  SynthSpec spec = a.spec.empty() ? SynthSpec::defaults() : SynthSpec::from_json(read_json_file(a.spec, "synth spec"));
  if (a.n) spec.n_assemblies = *a.n;
  if (a.min_parts) spec.min_parts = *a.min_parts;
  if (a.max_parts) spec.max_parts = *a.max_parts;
  if (a.overlap) spec.overlap_strength = *a.overlap;
  if (a.seed) spec.seed = *a.seed;
  if (a.descriptions) spec.with_descriptions = true;
  spec.validate();
  const auto records = generate(spec);
  ensure_parent(a.out);
  save_corpus(a.out, records);
  out << "generate-synth: " << records.size() << " assemblies, vocabulary of " << spec.vocabulary_size()
      << " words\n";

  RunManifest m;
  m.command = "generate-synth";
  m.config = spec.to_json();
  m.seed = spec.seed;
  if (!a.spec.empty()) m.inputs["spec"] = a.spec;
  m.outputs = {{"corpus", a.out}};
  m.wall_clock_seconds = seconds_since(t0);
  m.write(sibling(a.out, ".manifest.json"));
  return kOk;
}

void add_train_options(CLI::App& cmd, TrainArgs& a) {
  cmd.add_option("--config", a.config, "JSON run config (flags override it)");
  cmd.add_option("--data", a.data, "cleaned corpus JSONL")->required();
  cmd.add_option("--out", a.out, "output directory")->required();
  cmd.add_option("--objective", a.objective, "pair | contrastive | mlm");
  cmd.add_option("--case", a.sentence_case, "sentence case for the pair objective");
  cmd.add_option("--lr", a.lr, "learning rate");
  cmd.add_option("--dropout", a.dropout, "dropout probability");
  cmd.add_option("--tau", a.tau, "contrastive temperature");
  cmd.add_option("--neg-ratio", a.neg_ratio, "negatives per positive (pair objective)");
  cmd.add_option("--epochs", a.epochs, "number of epochs");
  cmd.add_option("--batch-size", a.batch_size, "mini-batch size");
  cmd.add_option("--max-len", a.max_len, "sequence length (128 or 256)");
  cmd.add_option("--heads", a.heads, "output attention heads (0 disables the layer)");
  cmd.add_option("--frozen-layers", a.frozen_layers, "freeze embeddings and this many bottom layers");
  cmd.add_option("--patience", a.patience, "early-stopping patience for the pair objective (0 disables)");
  cmd.add_option("--seed", a.seed, "run seed");
  cmd.add_option("--val-fraction", a.val_fraction, "validation share of the corpus");
  cmd.add_option("--test-fraction", a.test_fraction, "test share of the corpus");
}

}  // namespace

nlohmann::json RunManifest::to_json() const {
  return {{"command", command},
          {"config", config},
          {"inputs", inputs},
          {"outputs", outputs},
          {"seed", seed},
          {"toolkit_version", kToolkitVersion},
          {"finished_at", utc_timestamp()},
          {"wall_clock_seconds", wall_clock_seconds}};
}

void RunManifest::write(const fs::path& path) const {
  ensure_parent(path);
  write_json(path, to_json());
}

fs::path resolve_input(const std::string& path) {
  fs::path p(path);
  if (p.empty() || p.is_absolute() || fs::exists(p)) return p;
  if (const char* dir = std::getenv(kDataDirEnv); dir && *dir) {
    const fs::path alt = fs::path(dir) / p;
    if (fs::exists(alt)) return alt;
  }
  return p;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"cadtext: CAD assembly/part text toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolkitVersion);

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "clean, dedup and summarize a raw corpus");
  c_pre->add_option("--in", pre.in, "raw corpus JSONL")->required();
  c_pre->add_option("--out", pre.out, "cleaned corpus JSONL")->required();
  c_pre->add_option("--rules", pre.rules, "cleaning rules JSON");
  c_pre->add_option("--stats-out", pre.stats_out, "stats JSON (default <out>.stats.json)");
  c_pre->add_option("--errors-out", pre.errors_out, "malformed-line report (default <out>.errors.txt)");

  MakePairsArgs mp;
  auto* c_mp = app.add_subcommand("make-pairs", "build labelled sentence pairs");
  c_mp->add_option("--in", mp.in, "cleaned corpus JSONL")->required();
  c_mp->add_option("--out", mp.out, "pair JSONL")->required();
  c_mp->add_option("--case", mp.sentence_case, "base | case1 | case2 | case3 | case4");
  c_mp->add_option("--neg-ratio", mp.neg_ratio, "negatives per positive");
  c_mp->add_option("--seed", mp.seed, "sampling seed");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "train an encoder with one objective");
  add_train_options(*c_tr, tr);
  c_tr->add_option("--init", tr.init, "checkpoint to start from");

  SweepArgs sw;
  auto* c_sw = app.add_subcommand("sweep", "run a hyperparameter grid");
  add_train_options(*c_sw, sw.train);
  c_sw->add_option("--grid", sw.grid, "grid JSON: heads, learning_rate, dropout_p, max_len, seeds");
  c_sw->add_flag("--table1", sw.table1, "use the full 3x3x3x2 grid");
  c_sw->add_option("--parallel", sw.parallel, "cells trained concurrently");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval-zeroshot", "N-way zero-shot assembly-name prediction");
  c_ev->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  c_ev->add_option("--test", ev.test, "test corpus JSONL")->required();
  c_ev->add_option("--report", ev.report, "report JSON")->required();
  c_ev->add_option("--n", ev.n, "batch size N");
  c_ev->add_option("--seed", ev.seed, "batching seed");
  c_ev->add_option("--max-len", ev.max_len, "encoding length (default: checkpoint max_len)");
  c_ev->add_option("--export-sim", ev.export_sim, "directory for per-batch similarity CSV/PGM");
  c_ev->add_option("--export-limit", ev.export_limit, "export only the first K batches (0 = all)");
  c_ev->add_flag("--raw-cls", ev.raw_cls, "score normalized CLS states, bypassing the projection head");

  SynthArgs sy;
  auto* c_sy = app.add_subcommand("generate-synth", "write a synthetic corpus");
  c_sy->add_option("--out", sy.out, "corpus JSONL")->required();
  c_sy->add_option("--spec", sy.spec, "synth spec JSON");
  c_sy->add_option("--n", sy.n, "number of assemblies");
  c_sy->add_option("--overlap", sy.overlap, "overlap strength in [0, 1]");
  c_sy->add_option("--min-parts", sy.min_parts, "fewest parts per assembly");
  c_sy->add_option("--max-parts", sy.max_parts, "most parts per assembly");
  c_sy->add_option("--seed", sy.seed, "generation seed");
  c_sy->add_flag("--descriptions", sy.descriptions, "attach a short description to each assembly");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigExit;
  }

  try {
    if (*c_pre) return cmd_preprocess(pre, out);
    if (*c_mp) return cmd_make_pairs(mp, out);
    if (*c_tr) return cmd_train(tr, out);
    if (*c_sw) return cmd_sweep(sw, out);
    if (*c_ev) return cmd_eval(ev, out);
    if (*c_sy) return cmd_generate_synth(sy, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataExit;
  } catch (const RuntimeFailure& e) {
    err << "runtime error: " << e.what() << "\n";
    return kRuntimeExit;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeExit;
  }
  return kConfigExit;
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace cadtext::cli
