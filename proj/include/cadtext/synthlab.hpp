#pragma once

// Seeded synthetic assembly corpora with a tunable name<->parts signal, and
// brute-force reference implementations used to cross-check fast paths.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cadtext/corpus.hpp"
#include "cadtext/kernels.hpp"
#include "json.hpp"

namespace cadtext {

struct Theme {
  std::string name;
  std::vector<std::string> heads;       // assembly head words
  std::vector<std::string> part_nouns;  // second word of every part name
};

struct SynthSpec {
  std::size_t n_assemblies = 5000;
  std::vector<Theme> themes;
  std::vector<std::string> modifiers;
  std::vector<std::string> noise;
  std::size_t min_parts = 2;
  std::size_t max_parts = 6;
  // Probability that a part's first word is the assembly head word; otherwise
  // it is drawn from the noise pool.
  double overlap_strength = 0.8;
  bool with_descriptions = false;
  std::uint64_t seed = 0;

  // Twelve themes, vocabulary of roughly 2,000 words.
  static SynthSpec defaults();
  void validate() const;
  std::size_t vocabulary_size() const;

  // Pools are serialized only when they differ from the defaults.
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

// Names are "<modifier> <head>"; each part is "<head or noise> <theme part noun>".
// Part names are unique within a record and no two records share a dedup key.
std::vector<AssemblyRecord> generate(const SynthSpec& spec);

// Rank of the true row for each column of A P^T, where item i's parts are row
// i of P. Naive scalar loops, lower index wins ties.
std::vector<std::size_t> oracle_rank(const Matrix<double>& a, const Matrix<double>& p);

// All-pairs duplicate removal keeping the first occurrence; same semantics as
// dedup_corpus.
std::vector<AssemblyRecord> oracle_dedup(const std::vector<AssemblyRecord>& records);

}  // namespace cadtext
