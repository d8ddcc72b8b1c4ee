#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "cadtext/errors.hpp"
#include "cadtext/synthlab.hpp"
#include "cadtext/zeroshot.hpp"
#include "doctest.h"

using namespace cadtext;

namespace {

Matrix<double> unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  Matrix<double> m(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    for (auto& x : m.row(r)) {
      x = rng.uniform(-1, 1);
      s += x * x;
    }
    for (auto& x : m.row(r)) x /= std::sqrt(s);
  }
  return m;
}

Matrix<double> permuted_scores(const Matrix<double>& a, const Matrix<double>& p, const std::vector<std::size_t>& perm) {
  Matrix<double> pp(p.rows(), p.cols());
  for (std::size_t j = 0; j < perm.size(); ++j)
    for (std::size_t k = 0; k < p.cols(); ++k) pp(j, k) = p(perm[j], k);
  return kernels::matmul_nt(a, pp);
}

std::vector<std::size_t> identity(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST_CASE("batching") {
  auto b = make_batches(12321, 100, 0);
  CHECK(b.size() == 123);
  std::set<std::size_t> used;
  for (const auto& g : b) {
    CHECK(g.records.size() == 100);
    auto sorted = g.permutation;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == identity(100));
    used.insert(g.records.begin(), g.records.end());
  }
  CHECK(used.size() == 12300);
  CHECK(12321 - used.size() == 21);
  CHECK(make_batches(200, 100, 3).size() == 2);

  auto again = make_batches(12321, 100, 0);
  for (std::size_t i = 0; i < b.size(); ++i) {
    CHECK(b[i].records == again[i].records);
    CHECK(b[i].permutation == again[i].permutation);
  }
  CHECK(make_batches(12321, 100, 1)[0].records != b[0].records);
  CHECK_THROWS_AS(make_batches(50, 100, 0), DataError);
  try {
    make_batches(50, 100, 0);
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("smaller") != std::string::npos);
  }
  CHECK_THROWS_AS(make_batches(50, 0, 0), ConfigError);
}

TEST_CASE("rank examples") {
  Matrix<double> eye(4, 4);
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1;
  auto ranks = rank_batch(eye, identity(4));
  CHECK(ranks == std::vector<std::size_t>{0, 0, 0, 0});
  CHECK(topk_accuracy(ranks, 1, 4) == 1.0);

  Matrix<double> flat(3, 3, 0.5);
  CHECK(rank_batch(flat, identity(3)) == std::vector<std::size_t>{0, 1, 2});
  // Averaged over all 3! column orders the true row still has rank == its index.
  std::vector<std::size_t> perm = identity(3);
  double top1 = 0;
  int count = 0;
  do {
    top1 += topk_accuracy(rank_batch(flat, perm), 1, 3);
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(top1 / count == doctest::Approx(1.0 / 3));

  CHECK(rank_batch(Matrix<double>(1, 1, 0.3), identity(1)) == std::vector<std::size_t>{0});
}

TEST_CASE("rank_batch equals the scalar oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(100);
    auto a = unit_rows(n, 16, rng), p = unit_rows(n, 16, rng);
    if (trial % 4 == 0)  // force ties
      for (auto& x : a.values()) x = std::round(x * 2) / 2;
    std::vector<std::size_t> perm = identity(n);
    rng.shuffle(std::span<std::size_t>(perm));
    CHECK(rank_batch(permuted_scores(a, p, perm), perm) == oracle_rank(a, p));
  }
}

TEST_CASE("ranks are invariant to positive scaling") {
  Rng rng(2);
  auto a = unit_rows(30, 8, rng), p = unit_rows(30, 8, rng);
  auto s = kernels::matmul_nt(a, p);
  auto scaled = s;
  for (auto& x : scaled.values()) x = x * 7.5;
  CHECK(rank_batch(s, identity(30)) == rank_batch(scaled, identity(30)));
}

TEST_CASE("top-k accuracy") {
  std::vector<std::size_t> zeros(5, 0);
  for (std::size_t k : {1u, 5u}) CHECK(topk_accuracy(zeros, k, 5) == 1.0);
  std::vector<std::size_t> r = {0, 4, 10};
  CHECK(topk_accuracy(r, 5, 20) == doctest::Approx(2.0 / 3));
  Rng rng(3);
  std::vector<std::size_t> rand(200);
  for (auto& x : rand) x = rng.below(100);
  double prev = 0;
  for (std::size_t k = 1; k <= 100; ++k) {
    const double t = topk_accuracy(rand, k, 100);
    CHECK(t >= prev);
    prev = t;
  }
  CHECK(prev == 1.0);
  CHECK_THROWS_AS(topk_accuracy(r, 0, 20), std::invalid_argument);
  CHECK_THROWS_AS(topk_accuracy(r, 21, 20), std::invalid_argument);
}

TEST_CASE("random embeddings sit at chance") {
  Rng rng(4);
  double t1 = 0, t5 = 0, t10 = 0;
  const int trials = 300;
  for (int i = 0; i < trials; ++i) {
    auto a = unit_rows(100, 16, rng), p = unit_rows(100, 16, rng);
    auto batches = make_batches(100, 100, rng.next());
    auto rep = evaluate_embeddings(a, p, batches);
    t1 += rep.top1;
    t5 += rep.top5;
    t10 += rep.top10;
  }
  CHECK(std::abs(t1 / trials - 0.01) < 0.01);
  CHECK(std::abs(t5 / trials - 0.05) < 0.01);
  CHECK(std::abs(t10 / trials - 0.10) < 0.01);
}

TEST_CASE("evaluate_embeddings uses the batch rows") {
  Rng rng(5);
  auto a = unit_rows(250, 8, rng);
  auto batches = make_batches(250, 50, 9);
  std::vector<Matrix<double>> scores;
  auto rep = evaluate_embeddings(a, a, batches, &scores);
  CHECK(rep.n_batches == 5);
  CHECK(rep.batch_size == 50);
  CHECK(rep.top1 == 1.0);
  REQUIRE(scores.size() == 5);
  CHECK(scores[0].rows() == 50);
  auto j = rep.to_json();
  CHECK(j.at("topk").at("1") == 1.0);
  CHECK(j.at("per_batch").size() == 5);

  auto small = make_batches(250, 4, 9);
  auto rep4 = evaluate_embeddings(unit_rows(250, 8, rng), unit_rows(250, 8, rng), small);
  CHECK(rep4.top5 == 1.0);  // k capped at the batch size
}

TEST_CASE("evaluate with identical texts on both sides") {
  std::vector<AssemblyRecord> test;
  std::vector<std::string> texts;
  for (int i = 0; i < 20; ++i) {
    const std::string t = "w" + std::to_string(i) + " w" + std::to_string(i + 1) + " w" + std::to_string(i * 7 % 13);
    test.push_back({std::to_string(i), t, {t}, std::nullopt});
    texts.push_back(t);
  }
  auto vocab = Vocab::build(texts, 1, 100);
  EncoderConfig enc;
  enc.vocab_size = vocab.size();
  enc.d_model = 16;
  enc.n_layers = 1;
  enc.n_heads = 2;
  enc.d_ff = 16;
  enc.seed = 2;
  auto model = init_model<float>(enc, HeadConfig{16});
  std::vector<SimilarityMatrix> mats;
  auto rep = evaluate(model, vocab, test, {10, 1, 128}, &mats);
  CHECK(rep.top1 == 1.0);
  CHECK(rep.n_batches == 2);
  REQUIRE(mats.size() == 2);
  CHECK(mats[0].row_labels.size() == 10);
  CHECK(mats[0].col_labels.size() == 10);

  auto rep2 = evaluate(model, vocab, test, {10, 1, 128});
  CHECK(rep2.to_json() == rep.to_json());
  CHECK_THROWS_AS(evaluate(model, vocab, test, {10, 1, 256}), ConfigError);
  CHECK_THROWS_AS(evaluate(model, vocab, test, {30, 1, 128}), DataError);
}

TEST_CASE("similarity export") {
  const auto dir = std::filesystem::temp_directory_path() / "cadtext_test_sim";
  std::filesystem::create_directories(dir);
  SimilarityMatrix s;
  s.scores = Matrix<double>(2, 2);
  s.scores(0, 0) = s.scores(1, 1) = 1;
  s.row_labels = {"gear", "vice"};
  s.col_labels = {"shaft, gear", "jaw"};
  export_similarity_csv(s, dir / "s.csv");
  std::ifstream in(dir / "s.csv");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "\"shaft, gear\",\"jaw\"");
  CHECK(lines[1] == "1,0");
  CHECK(lines[2] == "0,1");
  CHECK(import_similarity_csv(dir / "s.csv") == s.scores);

  Rng rng(6);
  SimilarityMatrix r;
  r.scores = Matrix<double>(5, 5);
  for (auto& x : r.scores.values()) x = rng.uniform(-1, 1);
  r.row_labels = r.col_labels = {"a", "b", "c", "d", "e"};
  export_similarity_csv(r, dir / "r.csv");
  auto back = import_similarity_csv(dir / "r.csv");
  for (std::size_t i = 0; i < 25; ++i) CHECK(std::abs(back.values()[i] - r.scores.values()[i]) < 1e-6);

  export_similarity_pgm(r.scores, dir / "r.pgm");
  std::ifstream pgm(dir / "r.pgm", std::ios::binary);
  std::string magic;
  int w, h, maxv;
  pgm >> magic >> w >> h >> maxv;
  pgm.get();
  std::vector<unsigned char> px(25);
  pgm.read(reinterpret_cast<char*>(px.data()), 25);
  CHECK(magic == "P5");
  CHECK(w == 5);
  CHECK(maxv == 255);
  const auto& v = r.scores.values();
  const auto mx = std::max_element(v.begin(), v.end()) - v.begin();
  const auto mn = std::min_element(v.begin(), v.end()) - v.begin();
  CHECK(px[mx] == 255);
  CHECK(px[mn] == 0);
  std::filesystem::remove_all(dir);
}
