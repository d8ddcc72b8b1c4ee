#pragma once

// Auxiliary-sentence construction for the "are these parts in this assembly"
// pair task, plus random negative sampling.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cadtext/corpus.hpp"
#include "cadtext/random.hpp"
#include "json.hpp"

namespace cadtext {

enum class SentenceCase { Base, Case1, Case2, Case3, Case4 };

std::string_view to_string(SentenceCase c);
// Accepts "base", "case1" .. "case4". Throws ConfigError listing the valid names.
SentenceCase parse_sentence_case(std::string_view name);

struct SentencePair {
  std::string sentence_a;
  std::string sentence_b;
  int label = 0;  // 1 = related, 0 = not related
  std::string source_id;

  bool operator==(const SentencePair&) const = default;
};

// "an assembly named '<name>', containing the following parts: "
std::string sentence_prefix(std::string_view assembly_name);

// Minimum number of parts a record needs for the case (Case4 additionally
// needs a description).
std::size_t min_parts(SentenceCase c);
bool eligible(const AssemblyRecord& record, SentenceCase c);

// nullopt is the skip signal: too few parts, or no description for Case4.
std::optional<SentencePair> build_positive(const AssemblyRecord& record, SentenceCase c);

// sentence_a is the record's own first sentence; sentence_b comes from a
// uniformly drawn pool entry with a different id that is eligible for the
// case. Throws DataError if no such entry exists.
SentencePair sample_negative(const AssemblyRecord& record, const std::vector<AssemblyRecord>& pool,
                             SentenceCase c, Rng& rng);

struct PairDataset {
  std::vector<SentencePair> pairs;
  std::size_t skipped_records = 0;
};

// Positives for every eligible record, round(ratio * positives) negatives
// drawn round-robin over the positives, then shuffled.
PairDataset build_pair_dataset(const std::vector<AssemblyRecord>& records, SentenceCase c,
                               double negatives_per_positive, std::uint64_t seed);

void shuffle_pairs(std::vector<SentencePair>& pairs, std::uint64_t seed);

nlohmann::json pair_to_json(const SentencePair& p);
SentencePair pair_from_json(const nlohmann::json& j);
void save_pairs(const std::filesystem::path& path, const std::vector<SentencePair>& pairs);
std::vector<SentencePair> load_pairs(const std::filesystem::path& path);

}  // namespace cadtext
