#pragma once

// Assembly/part-name corpus: JSONL ingest, text cleaning, deduplication,
// deterministic splitting and funnel statistics.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace cadtext {

struct AssemblyRecord {
  std::string id;
  std::string assembly_name;
  std::vector<std::string> part_names;
  std::optional<std::string> description;

  bool operator==(const AssemblyRecord&) const = default;
};

struct RegexRule {
  std::string id;
  std::string pattern;
  std::string replacement;
};

// Cleaning pipeline, applied in this fixed order:
//   lowercase -> regex rules (in list order) -> extension strip ->
//   character filter -> whitespace collapse -> whole-name stopstrings
class CleaningRules {
 public:
  CleaningRules(std::vector<RegexRule> rules, bool lowercase, std::vector<std::string> extensions,
                std::vector<std::string> stopstrings);

  // Lowercase, strip backslash-x escape debris, strip CAD extensions,
  // drop "untitled" / "copy of" names.
  static CleaningRules defaults();
  static CleaningRules from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  std::string apply(std::string_view raw) const;

 private:
  std::vector<RegexRule> rules_;
  std::vector<std::regex> compiled_;
  bool lowercase_ = true;
  std::vector<std::string> extensions_;
  std::vector<std::string> stopstrings_;
};

struct LoadError {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<AssemblyRecord> records;
  std::vector<LoadError> errors;
};

struct CorpusStats {
  std::size_t n_raw = 0;
  std::size_t n_after_clean_dedup = 0;
  std::size_t n_unique_assembly_names = 0;
  std::map<std::size_t, std::size_t> part_count_histogram;

  nlohmann::json to_json() const;
};

struct SplitSpec {
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Splits {
  std::vector<AssemblyRecord> train;
  std::vector<AssemblyRecord> val;
  std::vector<AssemblyRecord> test;
};

// Parses one JSONL object. Throws DataError on malformed content.
AssemblyRecord record_from_json(const nlohmann::json& j, std::size_t line_number);
nlohmann::json record_to_json(const AssemblyRecord& r);

// Blank lines are skipped; malformed lines become LoadError entries with
// 1-based line numbers. Throws DataError if the file cannot be opened.
LoadResult load_corpus(const std::filesystem::path& path);
LoadResult parse_corpus(std::string_view text);
void save_corpus(const std::filesystem::path& path, const std::vector<AssemblyRecord>& records);

std::string clean_text(std::string_view raw, const CleaningRules& rules);

// Cleans name, parts and description. Empty parts are removed. Returns
// nullopt when the name or the whole part list cleans away.
std::optional<AssemblyRecord> clean_record(const AssemblyRecord& record, const CleaningRules& rules);
std::vector<AssemblyRecord> clean_corpus(const std::vector<AssemblyRecord>& records,
                                         const CleaningRules& rules);

// Removes repeated part names inside each record (first occurrence wins),
// then drops any record whose (name, part multiset) was already seen.
std::vector<AssemblyRecord> dedup_corpus(const std::vector<AssemblyRecord>& records);

std::vector<std::size_t> split_sizes(std::size_t n, const SplitSpec& spec);
Splits split_corpus(const std::vector<AssemblyRecord>& records, const SplitSpec& spec);

CorpusStats compute_stats(const std::vector<AssemblyRecord>& before,
                          const std::vector<AssemblyRecord>& after);

// Parts joined with ", ".
std::string join_parts(const std::vector<std::string>& parts);
std::string join_parts(const std::vector<std::string>& parts, std::size_t first, std::size_t last);

}  // namespace cadtext
