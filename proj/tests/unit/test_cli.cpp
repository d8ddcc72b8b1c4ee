#include <filesystem>
#include <fstream>
#include <sstream>

#include "cadtext/cli.hpp"
#include "cadtext/corpus.hpp"
#include "cadtext/sentence.hpp"
#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using cadtext::cli::run;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("cadtext_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

std::string small_config(const TempDir& dir, const std::string& objective, nlohmann::json extra = {}) {
  nlohmann::json j = {{"objective", objective}, {"epochs", 1},     {"batch_size", 16}, {"d_model", 16},
                      {"n_layers", 1},          {"n_heads", 2},    {"d_ff", 32},       {"d_embed", 8},
                      {"val_batch", 10},        {"seed", 5}};
  if (extra.is_object()) j.update(extra);
  const std::string path = dir / (objective + ".config.json");
  write_file(path, j.dump());
  return path;
}

std::string synth_corpus(const TempDir& dir, std::size_t n, bool descriptions = false) {
  const std::string path = dir / ("synth" + std::to_string(n) + (descriptions ? "d" : "") + ".jsonl");
  std::vector<std::string> args = {"generate-synth", "--out", path, "--n", std::to_string(n), "--seed", "11"};
  if (descriptions) args.push_back("--descriptions");
  REQUIRE(cli(args).code == 0);
  return path;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(cli({}).code == 1);
  CHECK(cli({"nonsense"}).code == 1);
  CHECK(cli({"preprocess", "--in", "x.jsonl"}).code == 1);  // --out missing
  CHECK(cli({"--version"}).code == 0);
}

TEST_CASE("generate-synth is deterministic and writes a manifest") {
  TempDir dir("synth");
  const auto a = dir / "a.jsonl", b = dir / "b.jsonl";
  REQUIRE(cli({"generate-synth", "--out", a, "--n", "50", "--seed", "3"}).code == 0);
  REQUIRE(cli({"generate-synth", "--out", b, "--n", "50", "--seed", "3"}).code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(cadtext::load_corpus(a).records.size() == 50);
  const auto m = read_json(dir / "a.jsonl.manifest.json");
  CHECK(m.at("command") == "generate-synth");
  CHECK(m.at("seed") == 3);
  CHECK(m.at("toolkit_version") == cadtext::cli::kToolkitVersion);
  CHECK(m.contains("finished_at"));
  CHECK(m.at("outputs").at("corpus") == a);

  REQUIRE(cli({"generate-synth", "--out", b, "--n", "50", "--seed", "4"}).code == 0);
  CHECK(slurp(a) != slurp(b));
  CHECK(cli({"generate-synth", "--out", b, "--overlap", "1.5"}).code == 1);
}

TEST_CASE("preprocess writes corpus, stats, errors and manifest") {
  TempDir dir("pre");
  const auto raw = dir / "raw.jsonl";
  write_file(raw,
             "{\"assembly_name\": \"Gear Box\", \"part_names\": [\"Shaft\", \"Gear\"]}\n"
             "{\"assembly_name\": \"gear box\", \"part_names\": [\"gear\", \"shaft\"]}\n"
             "not json\n"
             "{\"assembly_name\": \"Clamp\", \"part_names\": [\"x\"]}\n");
  const auto out = dir / "clean.jsonl";
  const auto r = cli({"preprocess", "--in", raw, "--out", out});
  REQUIRE(r.code == 0);
  CHECK(cadtext::load_corpus(out).records.size() == 2);
  const auto stats = read_json(dir / "clean.jsonl.stats.json");
  CHECK(stats.at("n_malformed_lines") == 1);
  CHECK(slurp(dir / "clean.jsonl.errors.txt").rfind("line 3:", 0) == 0);
  CHECK(read_json(dir / "clean.jsonl.manifest.json").at("command") == "preprocess");

  const auto first = slurp(out), first_stats = slurp(dir / "clean.jsonl.stats.json");
  REQUIRE(cli({"preprocess", "--in", raw, "--out", out}).code == 0);
  CHECK(slurp(out) == first);
  CHECK(slurp(dir / "clean.jsonl.stats.json") == first_stats);
}

TEST_CASE("missing input exits 2 and writes nothing") {
  TempDir dir("missing");
  const auto out = dir / "clean.jsonl";
  const auto r = cli({"preprocess", "--in", dir / "nope.jsonl", "--out", out});
  CHECK(r.code == 2);
  CHECK(r.err.find("nope.jsonl") != std::string::npos);
  CHECK_FALSE(fs::exists(out));
  CHECK_FALSE(fs::exists(dir / "clean.jsonl.manifest.json"));
}

TEST_CASE("make-pairs cases") {
  TempDir dir("pairs");
  const auto corpus = synth_corpus(dir, 120);
  const auto out = dir / "pairs.jsonl";
  REQUIRE(cli({"make-pairs", "--in", corpus, "--out", out, "--seed", "2"}).code == 0);
  const auto base = cadtext::load_pairs(out);
  CHECK(base.size() == 240);
  const auto again = slurp(out);
  REQUIRE(cli({"make-pairs", "--in", corpus, "--out", out, "--seed", "2"}).code == 0);
  CHECK(slurp(out) == again);

  const auto r4 = cli({"make-pairs", "--in", corpus, "--out", dir / "c4.jsonl", "--case", "case4"});
  CHECK(r4.code == 2);
  CHECK(r4.err.find("description") != std::string::npos);
  const auto described = synth_corpus(dir, 30, true);
  CHECK(cli({"make-pairs", "--in", described, "--out", dir / "c4.jsonl", "--case", "case4"}).code == 0);

  REQUIRE(cli({"make-pairs", "--in", corpus, "--out", dir / "c3.jsonl", "--case", "case3"}).code == 0);
  CHECK(cadtext::load_pairs(dir / "c3.jsonl").size() <= 240);
  CHECK(cli({"make-pairs", "--in", corpus, "--out", out, "--case", "case9"}).code == 1);
  CHECK(cli({"make-pairs", "--in", corpus, "--out", out, "--neg-ratio", "0"}).code == 1);
}

TEST_CASE("train and eval rerun byte for byte") {
  TempDir dir("train");
  const auto corpus = synth_corpus(dir, 150);
  const auto cfg = small_config(dir, "contrastive");
  const auto run_dir = dir / "run";
  REQUIRE(cli({"train", "--config", cfg, "--data", corpus, "--out", run_dir}).code == 0);
  for (const char* f : {"checkpoint.bin", "metrics.json", "config.json", "vocab.txt", "train.jsonl", "val.jsonl",
                        "test.jsonl", "manifest.json"})
    CHECK(fs::exists(fs::path(run_dir) / f));
  const auto manifest = read_json(fs::path(run_dir) / "manifest.json");
  CHECK(manifest.at("epoch_seconds").size() == 1);
  CHECK(manifest.at("config").at("d_model") == 16);
  const auto metrics = slurp(fs::path(run_dir) / "metrics.json");
  const auto checkpoint = slurp(fs::path(run_dir) / "checkpoint.bin");

  const auto report = dir / "report.json";
  const auto test = (fs::path(run_dir) / "test.jsonl").string();
  const auto ck = (fs::path(run_dir) / "checkpoint.bin").string();
  REQUIRE(cli({"eval-zeroshot", "--checkpoint", ck, "--test", test, "--report", report, "--n", "5"}).code == 0);
  const auto first_report = slurp(report);
  CHECK(read_json(report).at("n_batches") == 3);
  CHECK(read_json(dir / "report.json.manifest.json").at("command") == "eval-zeroshot");

  REQUIRE(cli({"train", "--config", cfg, "--data", corpus, "--out", run_dir}).code == 0);
  CHECK(slurp(fs::path(run_dir) / "metrics.json") == metrics);
  CHECK(slurp(fs::path(run_dir) / "checkpoint.bin") == checkpoint);
  REQUIRE(cli({"eval-zeroshot", "--checkpoint", ck, "--test", test, "--report", report, "--n", "5"}).code == 0);
  CHECK(slurp(report) == first_report);

  const auto big = cli({"eval-zeroshot", "--checkpoint", ck, "--test", test, "--report", dir / "big.json", "--n",
                        "100"});
  CHECK(big.code == 2);
  CHECK(big.err.find("--n 15") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "big.json"));

  const auto exported = dir / "sim";
  REQUIRE(cli({"eval-zeroshot", "--checkpoint", ck, "--test", test, "--report", report, "--n", "5",
               "--export-sim", exported, "--export-limit", "2"})
              .code == 0);
  CHECK(fs::exists(fs::path(exported) / "batch-1.pgm"));
  CHECK_FALSE(fs::exists(fs::path(exported) / "batch-2.csv"));
}

TEST_CASE("train config errors name the field") {
  TempDir dir("badcfg");
  const auto corpus = synth_corpus(dir, 40);
  const auto cfg = small_config(dir, "pair");
  auto r = cli({"train", "--config", cfg, "--data", corpus, "--out", dir / "run", "--lr", "0"});
  CHECK(r.code == 1);
  CHECK(r.err.find("learning_rate") != std::string::npos);
  r = cli({"train", "--config", cfg, "--data", corpus, "--out", dir / "run", "--max-len", "100"});
  CHECK(r.code == 1);
  CHECK(r.err.find("max_len") != std::string::npos);
  write_file(dir / "typo.json", "{\"learnin_rate\": 0.1}");
  r = cli({"train", "--config", dir / "typo.json", "--data", corpus, "--out", dir / "run"});
  CHECK(r.code == 1);
  CHECK(r.err.find("learnin_rate") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "run"));
}

TEST_CASE("pair training and a small sweep") {
  TempDir dir("sweep");
  const auto corpus = synth_corpus(dir, 80);
  const auto cfg = small_config(dir, "pair");
  REQUIRE(cli({"train", "--config", cfg, "--data", corpus, "--out", dir / "pair"}).code == 0);
  const auto metrics = read_json(fs::path(dir / "pair") / "metrics.json");
  CHECK(metrics.at("epochs").size() == 1);

  write_file(dir / "grid.json", R"({"heads": [0, 2], "learning_rate": [0.001, 0.0001], "dropout_p": [0.1], "max_len": [128]})");
  const auto sweep_dir = dir / "sw";
  REQUIRE(cli({"sweep", "--config", cfg, "--data", corpus, "--out", sweep_dir, "--grid", dir / "grid.json"}).code == 0);
  const auto csv = slurp(fs::path(sweep_dir) / "sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(read_json(fs::path(sweep_dir) / "manifest.json").at("command") == "sweep");
  REQUIRE(cli({"sweep", "--config", cfg, "--data", corpus, "--out", sweep_dir, "--grid", dir / "grid.json"}).code == 0);
  CHECK(slurp(fs::path(sweep_dir) / "sweep.csv") == csv);
}
