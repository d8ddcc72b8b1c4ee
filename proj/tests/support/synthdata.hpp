#pragma once

// Synthetic pair-classification datasets shared by the training tests and the
// acceptance runner.

#include <map>
#include <set>
#include <string>

#include "cadtext/sentence.hpp"
#include "cadtext/synthlab.hpp"
#include "cadtext/tokenizer.hpp"
#include "cadtext/training.hpp"

namespace cadtext::testing {

// 1 when the part sentence shares a token with the assembly name.
inline int token_overlap_label(const std::string& name, const std::string& parts) {
  const auto a = pretokenize(name);
  const std::set<std::string> name_tokens(a.begin(), a.end());
  for (const auto& t : pretokenize(parts))
    if (t != "," && name_tokens.count(t)) return 1;
  return 0;
}

inline std::vector<AssemblyRecord> synth_records(std::size_t n, double overlap, std::uint64_t seed) {
  auto spec = SynthSpec::defaults();
  spec.n_assemblies = n;
  spec.overlap_strength = overlap;
  spec.seed = seed;
  return generate(spec);
}

// Base-case pairs over an 80/20 record split. With `relabel`, every label is
// replaced by the token-overlap rule, which makes the task separable.
inline TrainData synth_pair_data(std::size_t n, double overlap, bool relabel, std::uint64_t seed) {
  const auto records = synth_records(n, overlap, seed);
  const auto splits = split_corpus(records, {0.8, 0.2, 0.0, seed});
  std::map<std::string, std::string> names;
  for (const auto& r : records) names[r.id] = r.assembly_name;
  auto build = [&](const std::vector<AssemblyRecord>& part, std::uint64_t s) {
    auto pairs = build_pair_dataset(part, SentenceCase::Base, 1.0, s).pairs;
    if (relabel)
      for (auto& p : pairs) p.label = token_overlap_label(names.at(p.source_id), p.sentence_b);
    return pairs;
  };
  TrainData data;
  data.train_pairs = build(splits.train, seed);
  data.val_pairs = build(splits.val, seed + 1);
  data.train_records = splits.train;
  data.val_records = splits.val;
  return data;
}

}  // namespace cadtext::testing
