#include "cadtext/sentence.hpp"

#include <cmath>
#include <fstream>

#include "cadtext/errors.hpp"

namespace cadtext {

namespace {

struct Halves {
  std::string a_segment;
  std::string b;
};

Halves split_for_case(const AssemblyRecord& r, SentenceCase c) {
  const auto& parts = r.part_names;
  const std::size_t n = parts.size();
  switch (c) {
    case SentenceCase::Base:
      return {"", join_parts(parts)};
    case SentenceCase::Case1:
      return {parts.front(), join_parts(parts, 1, n)};
    case SentenceCase::Case2:
      return {join_parts(parts, 0, n - 1), parts.back()};
    case SentenceCase::Case3: {
      const std::size_t first = (n + 1) / 2;
      return {join_parts(parts, 0, first), join_parts(parts, first, n)};
    }
    case SentenceCase::Case4:
      return {*r.description, join_parts(parts)};
  }
  return {};
}

std::string first_sentence(const AssemblyRecord& r, const std::string& segment) {
  std::string a = sentence_prefix(r.assembly_name);
  if (segment.empty()) {
    a.pop_back();  // no trailing space after "parts:"
    return a;
  }
  return a + segment;
}

}  // namespace

std::string_view to_string(SentenceCase c) {
  switch (c) {
    case SentenceCase::Base: return "base";
    case SentenceCase::Case1: return "case1";
    case SentenceCase::Case2: return "case2";
    case SentenceCase::Case3: return "case3";
    case SentenceCase::Case4: return "case4";
  }
  return "base";
}

SentenceCase parse_sentence_case(std::string_view name) {
  for (auto c : {SentenceCase::Base, SentenceCase::Case1, SentenceCase::Case2, SentenceCase::Case3,
                 SentenceCase::Case4})
    if (to_string(c) == name) return c;
  throw ConfigError("unknown sentence case '" + std::string(name) +
                    "'; valid cases: base, case1, case2, case3, case4");
}

std::string sentence_prefix(std::string_view assembly_name) {
  return "an assembly named '" + std::string(assembly_name) + "', containing the following parts: ";
}

std::size_t min_parts(SentenceCase c) {
  switch (c) {
    case SentenceCase::Case1:
    case SentenceCase::Case2:
    case SentenceCase::Case3:
      return 2;
    default:
      return 1;
  }
}

bool eligible(const AssemblyRecord& record, SentenceCase c) {
  if (record.part_names.size() < min_parts(c)) return false;
  if (c == SentenceCase::Case4 && (!record.description || record.description->empty())) return false;
  return true;
}

std::optional<SentencePair> build_positive(const AssemblyRecord& record, SentenceCase c) {
  if (!eligible(record, c)) return std::nullopt;
  auto halves = split_for_case(record, c);
  return SentencePair{first_sentence(record, halves.a_segment), std::move(halves.b), 1, record.id};
}

SentencePair sample_negative(const AssemblyRecord& record, const std::vector<AssemblyRecord>& pool,
                             SentenceCase c, Rng& rng) {
  if (pool.size() < 2) throw DataError("negative sampling needs a pool of at least 2 records");
  if (!eligible(record, c))
    throw DataError("record '" + record.id + "' is not eligible for " + std::string(to_string(c)));
  std::vector<std::size_t> candidates;
  candidates.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (pool[i].id != record.id && eligible(pool[i], c)) candidates.push_back(i);
  if (candidates.empty())
    throw DataError("no eligible distractor with an id different from '" + record.id + "'");

  const auto& distractor = pool[candidates[rng.below(candidates.size())]];
  SentencePair neg;
  neg.sentence_a = first_sentence(record, split_for_case(record, c).a_segment);
  neg.sentence_b = split_for_case(distractor, c).b;
  neg.label = 0;
  neg.source_id = record.id;
  return neg;
}

void shuffle_pairs(std::vector<SentencePair>& pairs, std::uint64_t seed) {
  Rng rng(seed);
  rng.shuffle(std::span<SentencePair>(pairs));
}

PairDataset build_pair_dataset(const std::vector<AssemblyRecord>& records, SentenceCase c,
                               double negatives_per_positive, std::uint64_t seed) {
  if (!(negatives_per_positive > 0.0)) throw ConfigError("negatives_per_positive must be > 0");
  PairDataset out;
  std::vector<AssemblyRecord> eligible_records;
  for (const auto& r : records) {
    if (eligible(r, c))
      eligible_records.push_back(r);
    else
      ++out.skipped_records;
  }
  for (const auto& r : eligible_records) out.pairs.push_back(*build_positive(r, c));

  const std::size_t n_pos = eligible_records.size();
  const auto n_neg =
      static_cast<std::size_t>(std::llround(negatives_per_positive * static_cast<double>(n_pos)));
  Rng rng(seed);
  for (std::size_t k = 0; k < n_neg && n_pos > 0; ++k)
    out.pairs.push_back(sample_negative(eligible_records[k % n_pos], eligible_records, c, rng));

  rng.shuffle(std::span<SentencePair>(out.pairs));
  return out;
}

nlohmann::json pair_to_json(const SentencePair& p) {
  return {{"a", p.sentence_a}, {"b", p.sentence_b}, {"label", p.label}, {"source_id", p.source_id}};
}

SentencePair pair_from_json(const nlohmann::json& j) {
  SentencePair p;
  p.sentence_a = j.at("a").get<std::string>();
  p.sentence_b = j.at("b").get<std::string>();
  p.label = j.at("label").get<int>();
  if (p.label != 0 && p.label != 1) throw DataError("pair label must be 0 or 1");
  p.source_id = j.value("source_id", std::string());
  return p;
}

void save_pairs(const std::filesystem::path& path, const std::vector<SentencePair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write pair file: " + path.string());
  for (const auto& p : pairs) out << pair_to_json(p).dump() << '\n';
}

std::vector<SentencePair> load_pairs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open pair file: " + path.string());
  std::vector<SentencePair> pairs;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      pairs.push_back(pair_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return pairs;
}

}  // namespace cadtext
