#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "cadtext/corpus.hpp"
#include "cadtext/errors.hpp"
#include "cadtext/random.hpp"
#include "cadtext/synthlab.hpp"
#include "doctest.h"

using namespace cadtext;

namespace {

AssemblyRecord rec(std::string id, std::string name, std::vector<std::string> parts) {
  return {std::move(id), std::move(name), std::move(parts), std::nullopt};
}

std::vector<AssemblyRecord> random_corpus(Rng& rng, std::size_t n) {
  // Small name and part alphabets so duplicates are common.
  const std::vector<std::string> names = {"gear", "clamp", "frame", "mount"};
  const std::vector<std::string> parts = {"bolt", "nut", "plate", "rod", "pin"};
  std::vector<AssemblyRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    AssemblyRecord r;
    r.id = std::to_string(i);
    r.assembly_name = names[rng.below(names.size())];
    const std::size_t k = 1 + rng.below(3);
    for (std::size_t j = 0; j < k; ++j) r.part_names.push_back(parts[rng.below(parts.size())]);
    out.push_back(r);
  }
  return out;
}

std::string random_text(Rng& rng) {
  static const std::string alphabet = "aZ 09.-_\\x3f\t()'\",STEPstep.sldprt UnTiTlEd copy of";
  std::string s;
  const std::size_t n = rng.below(30);
  for (std::size_t i = 0; i < n; ++i) s += alphabet[rng.below(alphabet.size())];
  return s;
}

}  // namespace

TEST_CASE("parse a corpus line") {
  auto r = parse_corpus(
      R"({"assembly_name":"line holder","part_names":["top line holder","bottom line holder","rod carrying tube","rod shaft"]})");
  REQUIRE(r.records.size() == 1);
  CHECK(r.errors.empty());
  CHECK(r.records[0].part_names.size() == 4);
  CHECK(r.records[0].id == "1");
  CHECK_FALSE(r.records[0].description.has_value());
}

TEST_CASE("empty input and malformed lines") {
  CHECK(parse_corpus("").records.empty());
  CHECK(compute_stats({}, {}).n_raw == 0);

  auto r = parse_corpus("{\"assembly_name\":\"a\",\"part_names\":[\"b\"]}\n{not json\n");
  CHECK(r.records.size() == 1);
  REQUIRE(r.errors.size() == 1);
  CHECK(r.errors[0].line == 2);

  auto wrong = parse_corpus("\n{\"assembly_name\":\"a\",\"part_names\":\"b\"}\n{\"part_names\":[]}\n");
  REQUIRE(wrong.errors.size() == 2);
  CHECK(wrong.errors[0].line == 2);
  CHECK(wrong.errors[1].line == 3);
}

TEST_CASE("load_corpus round trip and missing file") {
  const auto dir = std::filesystem::temp_directory_path() / "cadtext_test_corpus";
  std::filesystem::create_directories(dir);
  std::vector<AssemblyRecord> recs = {rec("x", "gear box", {"gear", "shaft"}), rec("y", "vice", {"jaw"})};
  recs[1].description = "a bench vice";
  save_corpus(dir / "c.jsonl", recs);
  CHECK(load_corpus(dir / "c.jsonl").records == recs);
  CHECK_THROWS_AS(load_corpus(dir / "missing.jsonl"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("clean_text examples") {
  const auto rules = CleaningRules::defaults();
  CHECK(clean_text("Macrolens Adapter for Nexus 5X", rules) == "macrolens adapter for nexus 5x");
  CHECK(clean_text("2238 375.step", rules) == "2238 375");
  CHECK(clean_text("   ", rules) == "");
  CHECK(clean_text("Untitled", rules) == "");
  CHECK(clean_text("untitled bracket", rules) == "untitled bracket");
  CHECK(clean_text("M3\\x2c bolt", rules) == "m3 bolt");
  CHECK(clean_text("spacer 2.5-3", rules) == "spacer 2.5-3");
  CHECK(clean_text("Part (1)", rules) == "part 1");
}

TEST_CASE("clean_text is idempotent") {
  const auto rules = CleaningRules::defaults();
  Rng rng(21);
  for (int i = 0; i < 2000; ++i) {
    const auto raw = random_text(rng);
    const auto once = clean_text(raw, rules);
    CAPTURE(raw);
    CHECK(clean_text(once, rules) == once);
  }
}

TEST_CASE("custom rules from json") {
  auto rules = CleaningRules::from_json(
      nlohmann::json::parse(R"({"rules":[{"id":"r","pattern":"foo","replacement":"bar"}],"lowercase":false})"));
  CHECK(rules.apply("Foo foo") == "Foo bar");
  CHECK(CleaningRules::from_json(rules.to_json()).to_json() == rules.to_json());
}

TEST_CASE("clean_record drops empty names and parts") {
  const auto rules = CleaningRules::defaults();
  CHECK_FALSE(clean_record(rec("1", "   ", {"bolt"}), rules));
  CHECK_FALSE(clean_record(rec("1", "gear", {"untitled"}), rules));
  auto r = clean_record(rec("1", "Gear", {"Bolt.STEP", "  "}), rules);
  REQUIRE(r);
  CHECK(r->part_names == std::vector<std::string>{"bolt"});
}

TEST_CASE("dedup examples") {
  auto a = rec("1", "gear", {"bolt", "nut"});
  auto b = rec("2", "gear", {"nut", "bolt"});
  auto c = rec("3", "gear", {"bolt", "bolt", "nut"});
  auto d = rec("4", "gear", {"plate"});
  CHECK(dedup_corpus({a, a}).size() == 1);
  CHECK(dedup_corpus({a, b}).size() == 1);
  auto single = dedup_corpus({c});
  CHECK(single[0].part_names == std::vector<std::string>{"bolt", "nut"});
  CHECK(dedup_corpus({a, d}).size() == 2);
  CHECK(dedup_corpus({}).empty());
  CHECK(oracle_dedup({}).empty());
}

TEST_CASE("dedup matches the all-pairs oracle and is idempotent") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto corpus = random_corpus(rng, rng.below(200));
    const auto fast = dedup_corpus(corpus);
    CHECK(fast == oracle_dedup(corpus));
    CHECK(dedup_corpus(fast) == fast);
  }
}

TEST_CASE("split sizes and partition") {
  SplitSpec spec{0.8, 0.1, 0.1, 7};
  CHECK(split_sizes(10, spec) == std::vector<std::size_t>{8, 1, 1});
  CHECK(split_sizes(0, spec) == std::vector<std::size_t>{0, 0, 0});
  CHECK(split_sizes(7, {0.5, 0.25, 0.25, 0}) == std::vector<std::size_t>{3, 2, 2});

  std::vector<AssemblyRecord> recs;
  for (int i = 0; i < 100; ++i) recs.push_back(rec("r" + std::to_string(i), "n", {"p"}));
  auto s1 = split_corpus(recs, {0.8, 0.1, 0.1, 1});
  auto s1b = split_corpus(recs, {0.8, 0.1, 0.1, 1});
  auto s2 = split_corpus(recs, {0.8, 0.1, 0.1, 2});
  CHECK(s1.train == s1b.train);
  CHECK(s1.test == s1b.test);
  CHECK(s1.train.size() == 80);
  CHECK(s1.val.size() == 10);
  CHECK(s1.test.size() == 10);
  CHECK(s1.test != s2.test);

  std::multiset<std::string> all;
  for (const auto* part : {&s1.train, &s1.val, &s1.test})
    for (const auto& r : *part) all.insert(r.id);
  CHECK(all.size() == 100);
  CHECK(std::set<std::string>(all.begin(), all.end()).size() == 100);

  auto empty = split_corpus({}, spec);
  CHECK(empty.train.empty());
  CHECK(empty.test.empty());
}

TEST_CASE("split membership does not depend on other records") {
  std::vector<AssemblyRecord> recs;
  for (int i = 0; i < 50; ++i) recs.push_back(rec("r" + std::to_string(i), "n", {"p"}));
  auto reversed = recs;
  std::reverse(reversed.begin(), reversed.end());
  auto a = split_corpus(recs, {0.6, 0.2, 0.2, 3});
  auto b = split_corpus(reversed, {0.6, 0.2, 0.2, 3});
  std::set<std::string> ta, tb;
  for (const auto& r : a.test) ta.insert(r.id);
  for (const auto& r : b.test) tb.insert(r.id);
  CHECK(ta == tb);
}

TEST_CASE("invalid split fractions") {
  CHECK_THROWS_AS(split_sizes(10, {0.8, 0.1, 0.2, 0}), ConfigError);
  CHECK_THROWS_AS(split_sizes(10, {1.2, -0.1, -0.1, 0}), ConfigError);
}

TEST_CASE("stats") {
  auto a = rec("1", "gear", {"bolt"});
  auto b = rec("2", "gear", {"bolt"});
  auto c = rec("3", "vice", {"jaw", "screw"});
  const std::vector<AssemblyRecord> before = {a, b, c};
  const auto after = dedup_corpus(before);
  auto s = compute_stats(before, after);
  CHECK(s.n_raw == 3);
  CHECK(s.n_after_clean_dedup == 2);
  CHECK(s.n_unique_assembly_names <= 2);
  CHECK(s.part_count_histogram.at(1) == 1);
  CHECK(s.part_count_histogram.at(2) == 1);
  CHECK(s.to_json().at("part_count_histogram").at("2") == 1);
}

TEST_CASE("join_parts") {
  CHECK(join_parts({"a", "b", "c"}) == "a, b, c");
  CHECK(join_parts({"a", "b", "c"}, 1, 3) == "b, c");
  CHECK(join_parts({}) == "");
}
