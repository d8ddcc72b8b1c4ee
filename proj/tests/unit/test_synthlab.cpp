#include <set>
#include <sstream>

#include "cadtext/errors.hpp"
#include "cadtext/synthlab.hpp"
#include "cadtext/tokenizer.hpp"
#include "cadtext/zeroshot.hpp"
#include "doctest.h"

using namespace cadtext;

namespace {

std::string head_of(const AssemblyRecord& r) { return r.assembly_name.substr(r.assembly_name.find(' ') + 1); }

bool shares_token(const AssemblyRecord& r) {
  auto name = pretokenize(r.assembly_name);
  std::set<std::string> words(name.begin(), name.end());
  for (const auto& p : r.part_names)
    for (const auto& t : pretokenize(p))
      if (words.count(t)) return true;
  return false;
}

SynthSpec small_spec(double overlap, std::size_t n = 2000) {
  auto s = SynthSpec::defaults();
  s.n_assemblies = n;
  s.overlap_strength = overlap;
  s.seed = 3;
  return s;
}

}  // namespace

TEST_CASE("default pools") {
  auto s = SynthSpec::defaults();
  CHECK(s.themes.size() == 12);
  CHECK(s.vocabulary_size() >= 1500);
  CHECK(s.vocabulary_size() <= 2500);
  CHECK_NOTHROW(s.validate());
  auto bad = s;
  bad.min_parts = 7;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.overlap_strength = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("generated records are well formed") {
  auto recs = generate(small_spec(0.8));
  CHECK(recs.size() == 2000);
  std::set<std::string> ids;
  for (const auto& r : recs) {
    ids.insert(r.id);
    CHECK(r.part_names.size() >= 2);
    CHECK(r.part_names.size() <= 6);
    CHECK(std::set<std::string>(r.part_names.begin(), r.part_names.end()).size() == r.part_names.size());
    CHECK_FALSE(r.description.has_value());
  }
  CHECK(ids.size() == recs.size());
  CHECK(dedup_corpus(recs).size() == recs.size());
  const auto cleaned = clean_corpus(recs, CleaningRules::defaults());
  CHECK(cleaned == recs);
}

TEST_CASE("overlap strength one puts the head word in some part") {
  for (const auto& r : generate(small_spec(1.0))) {
    const auto head = head_of(r);
    bool found = false;
    for (const auto& p : r.part_names) found = found || p.rfind(head + " ", 0) == 0;
    CHECK(found);
  }
}

TEST_CASE("overlap strength zero leaves only pool collisions") {
  const auto spec = small_spec(0.0, 10000);
  // A shared token can only come from a noise word that is also a name word.
  std::set<std::string> name_words(spec.modifiers.begin(), spec.modifiers.end());
  for (const auto& t : spec.themes) name_words.insert(t.heads.begin(), t.heads.end());
  std::size_t colliding = 0;
  for (const auto& w : spec.noise) colliding += name_words.count(w);
  std::size_t overlapping = 0;
  for (const auto& r : generate(spec)) overlapping += shares_token(r);
  const double rate = double(overlapping) / spec.n_assemblies;
  if (colliding == 0)
    CHECK(rate == 0.0);
  else
    CHECK(rate < 0.05);

  std::size_t with_overlap = 0;
  for (const auto& r : generate(small_spec(0.8, 10000))) with_overlap += shares_token(r);
  CHECK(double(with_overlap) / 10000 > 0.95);
}

TEST_CASE("generation is deterministic") {
  CHECK(generate(small_spec(0.5, 300)) == generate(small_spec(0.5, 300)));
  auto other = small_spec(0.5, 300);
  other.seed = 4;
  CHECK(generate(other) != generate(small_spec(0.5, 300)));
}

TEST_CASE("descriptions") {
  auto spec = small_spec(0.8, 50);
  spec.with_descriptions = true;
  for (const auto& r : generate(spec)) {
    REQUIRE(r.description.has_value());
    CHECK(r.description->find(" assembly with ") != std::string::npos);
    CHECK(r.description->find("a optics") == std::string::npos);
  }
}

TEST_CASE("spec json round trip") {
  auto spec = small_spec(0.3, 77);
  spec.min_parts = 3;
  auto j = spec.to_json();
  CHECK_FALSE(j.contains("themes"));
  auto back = SynthSpec::from_json(j);
  CHECK(back.n_assemblies == 77);
  CHECK(back.min_parts == 3);
  CHECK(generate(back) == generate(spec));

  spec.noise = {"zz1", "zz2", "zz3", "zz4", "zz5", "zz6", "zz7", "zz8"};
  CHECK(SynthSpec::from_json(spec.to_json()).noise == spec.noise);
  CHECK_THROWS_AS(SynthSpec::from_json(nlohmann::json{{"bogus", 1}}), ConfigError);
}

TEST_CASE("oracle examples") {
  Matrix<double> eye(5, 5);
  for (std::size_t i = 0; i < 5; ++i) eye(i, i) = 1;
  CHECK(oracle_rank(eye, eye) == std::vector<std::size_t>{0, 0, 0, 0, 0});
  CHECK(oracle_rank(Matrix<double>(1, 3, 1.0), Matrix<double>(1, 3, 1.0)) == std::vector<std::size_t>{0});
  AssemblyRecord a{"1", "x", {"p", "q"}, std::nullopt};
  AssemblyRecord b{"2", "x", {"q", "p"}, std::nullopt};
  AssemblyRecord c{"3", "y", {"p"}, std::nullopt};
  CHECK(oracle_dedup({a, b, c}).size() == 2);
}

TEST_CASE("bag-of-words matching recovers names far above chance") {
  // Score = number of name tokens found among the part tokens.
  const auto recs = generate(small_spec(0.8, 1000));
  auto vocab = Vocab::build([&] {
    std::vector<std::string> t;
    for (const auto& r : recs) {
      t.push_back(r.assembly_name);
      t.push_back(join_parts(r.part_names));
    }
    return t;
  }(), 1, 100000);
  Matrix<double> names(recs.size(), vocab.size()), parts(recs.size(), vocab.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    for (const auto& t : pretokenize(recs[i].assembly_name)) names(i, vocab.id(t)) = 1;
    for (const auto& t : pretokenize(join_parts(recs[i].part_names)))
      if (t != ",") parts(i, vocab.id(t)) = 1;
  }
  auto rep = evaluate_embeddings(names, parts, make_batches(recs.size(), 100, 1));
  CHECK(rep.top1 > 0.6);
  CHECK(rep.top10 > 0.95);
}
