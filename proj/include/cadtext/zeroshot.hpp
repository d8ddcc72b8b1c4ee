#pragma once

// N-way zero-shot assembly-name prediction: batch the test records, embed
// names and part lists with the same encoder, score every (name, parts)
// pairing by cosine similarity and rank the true name per part list.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cadtext/corpus.hpp"
#include "cadtext/kernels.hpp"
#include "cadtext/model.hpp"
#include "json.hpp"

namespace cadtext {

struct BatchGroup {
  std::vector<std::size_t> records;      // indices into the test set, batch row order
  std::vector<std::size_t> permutation;  // column j shows the parts of batch row permutation[j]
};

// Shuffles record order with `seed`, cuts consecutive groups of n and drops
// the remainder. Throws DataError (suggesting a smaller n) if n_records < n.
std::vector<BatchGroup> make_batches(std::size_t n_records, std::size_t n, std::uint64_t seed);

struct SimilarityMatrix {
  Matrix<double> scores;  // rows: assembly names, columns: part lists
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
};

// For each column j the candidates are all rows; the true row is
// permutation[j]. Rank = number of rows scoring strictly higher, plus rows
// scoring equal with a lower index. Returned per batch row: result[permutation[j]].
std::vector<std::size_t> rank_batch(const Matrix<double>& scores, std::span<const std::size_t> permutation);

// Fraction of ranks < k. Throws std::invalid_argument unless 0 < k <= n_candidates.
double topk_accuracy(std::span<const std::size_t> ranks, std::size_t k, std::size_t n_candidates);

struct BatchResult {
  double top1 = 0, top5 = 0, top10 = 0;
  std::vector<std::size_t> ranks;
};

struct EvalReport {
  std::size_t n_batches = 0;
  std::size_t batch_size = 0;
  double top1 = 0, top5 = 0, top10 = 0;  // unweighted means over batches
  std::vector<BatchResult> per_batch;

  nlohmann::json to_json() const;
};

// Scores pre-computed unit embeddings (one row per test record in both
// matrices) batch by batch. k is capped at the batch size.
EvalReport evaluate_embeddings(const Matrix<double>& names, const Matrix<double>& parts,
                               const std::vector<BatchGroup>& batches,
                               std::vector<Matrix<double>>* batch_scores = nullptr);

struct EvalOptions {
  std::size_t batch_size = 100;
  std::uint64_t seed = 0;
  std::size_t max_len = 128;
};

EvalReport evaluate(const Model<float>& model, const Vocab& vocab,
                    const std::vector<AssemblyRecord>& test, const EvalOptions& options,
                    std::vector<SimilarityMatrix>* matrices = nullptr);

// CSV: header of quoted column labels, then one row of %.17g values per
// matrix row. Row labels go to "<path>.rows.txt", one per line.
void export_similarity_csv(const SimilarityMatrix& s, const std::filesystem::path& path);
Matrix<double> import_similarity_csv(const std::filesystem::path& path);
// Binary PGM (P5), min-max scaled: max entry -> 255, min -> 0.
void export_similarity_pgm(const Matrix<double>& s, const std::filesystem::path& path);

}  // namespace cadtext
