#include "cadtext/zeroshot.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cadtext/errors.hpp"
#include "cadtext/random.hpp"

namespace cadtext {

namespace {

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<BatchGroup> make_batches(std::size_t n_records, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("batch size must be > 0");
  if (n_records < n)
    throw DataError("test set has " + std::to_string(n_records) + " records, fewer than the batch size " +
                    std::to_string(n) + "; use a smaller batch size (e.g. --n " +
                    std::to_string(std::max<std::size_t>(n_records, 1)) + ")");
  Rng rng(seed);
  std::vector<std::size_t> order(n_records);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<BatchGroup> batches;
  for (std::size_t start = 0; start + n <= n_records; start += n) {
    BatchGroup g;
    g.records.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(start + n));
    g.permutation.resize(n);
    std::iota(g.permutation.begin(), g.permutation.end(), 0);
    rng.shuffle(std::span<std::size_t>(g.permutation));
    batches.push_back(std::move(g));
  }
  return batches;
}

std::vector<std::size_t> rank_batch(const Matrix<double>& scores, std::span<const std::size_t> permutation) {
  const std::size_t rows = scores.rows(), cols = scores.cols();
  if (permutation.size() != cols) throw std::invalid_argument("rank_batch: permutation size mismatch");
  std::vector<double> true_score(cols);
  std::vector<std::size_t> true_row(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    if (permutation[j] >= rows) throw std::invalid_argument("rank_batch: permutation out of range");
    true_row[j] = permutation[j];
    true_score[j] = scores(permutation[j], j);
  }
  // Row-major sweep: each row updates every column's counter.
  std::vector<std::size_t> count(cols, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* s = scores.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j)
      count[j] += (s[j] > true_score[j]) | ((s[j] == true_score[j]) & (i < true_row[j]));
  }
  std::vector<std::size_t> ranks(rows, 0);
  for (std::size_t j = 0; j < cols; ++j) ranks[true_row[j]] = count[j];
  return ranks;
}

double topk_accuracy(std::span<const std::size_t> ranks, std::size_t k, std::size_t n_candidates) {
  if (k == 0 || k > n_candidates)
    throw std::invalid_argument("topk_accuracy: k must satisfy 0 < k <= " + std::to_string(n_candidates));
  if (ranks.empty()) return 0.0;
  std::size_t hits = 0;
  for (auto r : ranks) hits += r < k;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json batches = nlohmann::json::array();
  for (const auto& b : per_batch)
    batches.push_back({{"topk", {{"1", b.top1}, {"5", b.top5}, {"10", b.top10}}}, {"ranks", b.ranks}});
  return {{"n_batches", n_batches},
          {"batch_size", batch_size},
          {"topk", {{"1", top1}, {"5", top5}, {"10", top10}}},
          {"per_batch", batches}};
}

EvalReport evaluate_embeddings(const Matrix<double>& names, const Matrix<double>& parts,
                               const std::vector<BatchGroup>& batches,
                               std::vector<Matrix<double>>* batch_scores) {
  if (!names.same_shape(parts)) throw std::invalid_argument("evaluate: embedding matrices differ in shape");
  EvalReport report;
  report.n_batches = batches.size();
  report.per_batch.resize(batches.size());
  if (batch_scores) batch_scores->assign(batches.size(), {});
  const long long nb = static_cast<long long>(batches.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long long bi = 0; bi < nb; ++bi) {
    const auto& g = batches[static_cast<std::size_t>(bi)];
    const std::size_t n = g.records.size();
    Matrix<double> a(n, names.cols()), p(n, parts.cols());
    for (std::size_t i = 0; i < n; ++i) {
      auto src = names.row(g.records[i]);
      std::copy(src.begin(), src.end(), a.row(i).begin());
    }
    for (std::size_t j = 0; j < n; ++j) {
      auto src = parts.row(g.records[g.permutation[j]]);
      std::copy(src.begin(), src.end(), p.row(j).begin());
    }
    Matrix<double> s = kernels::matmul_nt(a, p);
    auto& br = report.per_batch[static_cast<std::size_t>(bi)];
    br.ranks = rank_batch(s, g.permutation);
    br.top1 = topk_accuracy(br.ranks, std::min<std::size_t>(1, n), n);
    br.top5 = topk_accuracy(br.ranks, std::min<std::size_t>(5, n), n);
    br.top10 = topk_accuracy(br.ranks, std::min<std::size_t>(10, n), n);
    if (batch_scores) (*batch_scores)[static_cast<std::size_t>(bi)] = std::move(s);
  }
  for (const auto& b : report.per_batch) {
    report.top1 += b.top1;
    report.top5 += b.top5;
    report.top10 += b.top10;
  }
  if (!batches.empty()) {
    report.batch_size = batches.front().records.size();
    const double inv = 1.0 / static_cast<double>(batches.size());
    report.top1 *= inv;
    report.top5 *= inv;
    report.top10 *= inv;
  }
  return report;
}

EvalReport evaluate(const Model<float>& model, const Vocab& vocab,
                    const std::vector<AssemblyRecord>& test, const EvalOptions& options,
                    std::vector<SimilarityMatrix>* matrices) {
  if (options.max_len > model.encoder.max_len)
    throw ConfigError("requested max_len " + std::to_string(options.max_len) +
                      " exceeds the checkpoint encoder max_len " + std::to_string(model.encoder.max_len));
  const auto batches = make_batches(test.size(), options.batch_size, options.seed);
  std::vector<std::string> name_texts, part_texts;
  for (const auto& r : test) {
    name_texts.push_back(r.assembly_name);
    part_texts.push_back(join_parts(r.part_names));
  }
  Matrix<double> names, parts;
  try {
    names = embed_texts(model, vocab, name_texts, options.max_len);
    parts = embed_texts(model, vocab, part_texts, options.max_len);
  } catch (const std::exception& e) {
    throw RuntimeFailure(std::string("encoding the test set failed: ") + e.what());
  }
  std::vector<Matrix<double>> scores;
  auto report = evaluate_embeddings(names, parts, batches, matrices ? &scores : nullptr);
  if (matrices) {
    matrices->clear();
    for (std::size_t b = 0; b < batches.size(); ++b) {
      SimilarityMatrix m;
      m.scores = std::move(scores[b]);
      for (auto r : batches[b].records) m.row_labels.push_back(test[r].assembly_name);
      for (auto j : batches[b].permutation) m.col_labels.push_back(part_texts[batches[b].records[j]]);
      matrices->push_back(std::move(m));
    }
  }
  return report;
}

void export_similarity_csv(const SimilarityMatrix& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write similarity CSV: " + path.string());
  for (std::size_t j = 0; j < s.scores.cols(); ++j) {
    if (j) out << ',';
    out << csv_quote(j < s.col_labels.size() ? s.col_labels[j] : "c" + std::to_string(j));
  }
  out << '\n';
  for (std::size_t i = 0; i < s.scores.rows(); ++i) {
    for (std::size_t j = 0; j < s.scores.cols(); ++j) {
      if (j) out << ',';
      out << format_number(s.scores(i, j));
    }
    out << '\n';
  }
  if (!out) throw RuntimeFailure("similarity CSV write failed: " + path.string());
  if (!s.row_labels.empty()) {
    std::ofstream rows(path.string() + ".rows.txt", std::ios::binary);
    if (!rows) throw RuntimeFailure("cannot write row labels for " + path.string());
    for (const auto& l : s.row_labels) rows << l << '\n';
  }
}

Matrix<double> import_similarity_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open similarity CSV: " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  const std::size_t cols = rows.empty() ? 0 : rows.front().size();
  Matrix<double> m(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) throw DataError("ragged similarity CSV: " + path.string());
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

void export_similarity_pgm(const Matrix<double>& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write PGM: " + path.string());
  double lo = 0, hi = 0;
  if (!s.empty()) {
    const auto [mn, mx] = std::minmax_element(s.values().begin(), s.values().end());
    lo = *mn;
    hi = *mx;
  }
  out << "P5\n" << s.cols() << ' ' << s.rows() << "\n255\n";
  for (double v : s.values()) {
    const double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
  }
  if (!out) throw RuntimeFailure("PGM write failed: " + path.string());
}

}  // namespace cadtext
