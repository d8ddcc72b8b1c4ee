#include "cadtext/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "cadtext/errors.hpp"
#include "cadtext/random.hpp"

namespace cadtext {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool keep_char(std::string_view s, std::size_t i) {
  const auto c = static_cast<unsigned char>(s[i]);
  if (c >= 0x80) return true;  // UTF-8 continuation and lead bytes
  if (std::isalnum(c)) return true;
  if (c == ' ' || c == '-') return true;
  if (c == '.') return i > 0 && i + 1 < s.size() && is_digit(s[i - 1]) && is_digit(s[i + 1]);
  return false;
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::string strip_extensions(const std::string& s, const std::vector<std::string>& extensions) {
  if (extensions.empty()) return s;
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (std::isspace(static_cast<unsigned char>(s[i]))) {
      out.push_back(s[i++]);
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    std::string_view token(s.data() + i, j - i);
    for (const auto& ext : extensions) {
      if (token.size() >= ext.size() && token.substr(token.size() - ext.size()) == ext) {
        token.remove_suffix(ext.size());
        break;
      }
    }
    out.append(token);
    i = j;
  }
  return out;
}

std::string dedup_key(const AssemblyRecord& r) {
  std::vector<std::string> parts = r.part_names;
  std::sort(parts.begin(), parts.end());
  std::string key = r.assembly_name;
  for (const auto& p : parts) {
    key.push_back('\x1f');
    key += p;
  }
  return key;
}

}  // namespace

CleaningRules::CleaningRules(std::vector<RegexRule> rules, bool lowercase,
                             std::vector<std::string> extensions,
                             std::vector<std::string> stopstrings)
    : rules_(std::move(rules)),
      lowercase_(lowercase),
      extensions_(std::move(extensions)),
      stopstrings_(std::move(stopstrings)) {
  compiled_.reserve(rules_.size());
  for (const auto& r : rules_) {
    try {
      compiled_.emplace_back(r.pattern, std::regex::ECMAScript | std::regex::optimize);
    } catch (const std::regex_error& e) {
      throw ConfigError("cleaning rule '" + r.id + "' has an invalid pattern: " + e.what());
    }
  }
}

CleaningRules CleaningRules::defaults() {
  return CleaningRules({{"escape-artifacts", R"((\\)+x?[0-9a-f]*)", ""}}, true,
                       {".step", ".stp", ".sldprt", ".sldasm", ".iges", ".igs", ".stl"},
                       {"untitled", "copy of"});
}

CleaningRules CleaningRules::from_json(const nlohmann::json& j) {
  const auto base = defaults();
  std::vector<RegexRule> rules = base.rules_;
  if (j.contains("rules")) {
    rules.clear();
    for (const auto& r : j.at("rules"))
      rules.push_back({r.value("id", std::string("rule")), r.at("pattern").get<std::string>(),
                       r.value("replacement", std::string())});
  }
  return CleaningRules(std::move(rules), j.value("lowercase", base.lowercase_),
                       j.value("extensions", base.extensions_),
                       j.value("stopstrings", base.stopstrings_));
}

nlohmann::json CleaningRules::to_json() const {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& r : rules_)
    rules.push_back({{"id", r.id}, {"pattern", r.pattern}, {"replacement", r.replacement}});
  return {{"lowercase", lowercase_},
          {"rules", rules},
          {"extensions", extensions_},
          {"stopstrings", stopstrings_}};
}

std::string CleaningRules::apply(std::string_view raw) const {
  std::string s(raw);
  if (lowercase_)
    for (auto& c : s)
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  for (std::size_t i = 0; i < compiled_.size(); ++i)
    s = std::regex_replace(s, compiled_[i], rules_[i].replacement);
  s = strip_extensions(s, extensions_);
  std::string filtered(s.size(), ' ');
  for (std::size_t i = 0; i < s.size(); ++i)
    if (keep_char(s, i)) filtered[i] = s[i];
  s = collapse_whitespace(filtered);
  for (const auto& stop : stopstrings_)
    if (s == stop) return {};
  return s;
}

std::string clean_text(std::string_view raw, const CleaningRules& rules) { return rules.apply(raw); }

std::optional<AssemblyRecord> clean_record(const AssemblyRecord& record, const CleaningRules& rules) {
  AssemblyRecord out;
  out.id = record.id;
  out.assembly_name = rules.apply(record.assembly_name);
  if (out.assembly_name.empty()) return std::nullopt;
  for (const auto& p : record.part_names) {
    auto cleaned = rules.apply(p);
    if (!cleaned.empty()) out.part_names.push_back(std::move(cleaned));
  }
  if (out.part_names.empty()) return std::nullopt;
  if (record.description) {
    auto d = rules.apply(*record.description);
    if (!d.empty()) out.description = std::move(d);
  }
  return out;
}

std::vector<AssemblyRecord> clean_corpus(const std::vector<AssemblyRecord>& records,
                                         const CleaningRules& rules) {
  std::vector<std::optional<AssemblyRecord>> cleaned(records.size());
  const long long n = static_cast<long long>(records.size());
#pragma omp parallel for schedule(dynamic, 256)
  for (long long i = 0; i < n; ++i) cleaned[i] = clean_record(records[i], rules);
  std::vector<AssemblyRecord> out;
  out.reserve(records.size());
  for (auto& r : cleaned)
    if (r) out.push_back(std::move(*r));
  return out;
}

std::vector<AssemblyRecord> dedup_corpus(const std::vector<AssemblyRecord>& records) {
  std::vector<AssemblyRecord> out;
  std::unordered_set<std::string> seen_records;
  for (const auto& r : records) {
    AssemblyRecord unique = r;
    unique.part_names.clear();
    std::unordered_set<std::string> seen_parts;
    for (const auto& p : r.part_names)
      if (seen_parts.insert(p).second) unique.part_names.push_back(p);
    if (seen_records.insert(dedup_key(unique)).second) out.push_back(std::move(unique));
  }
  return out;
}

void SplitSpec::validate() const {
  for (double f : {train_fraction, val_fraction, test_fraction})
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
}

std::vector<std::size_t> split_sizes(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  const double fractions[3] = {spec.train_fraction, spec.val_fraction, spec.test_fraction};
  std::vector<std::size_t> sizes(3);
  std::vector<double> remainders(3);
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = fractions[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact));
    remainders[i] = exact - std::floor(exact);
    assigned += sizes[i];
  }
  std::vector<int> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return remainders[a] > remainders[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
  return sizes;
}

Splits split_corpus(const std::vector<AssemblyRecord>& records, const SplitSpec& spec) {
  const auto sizes = split_sizes(records.size(), spec);
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
  keyed.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i)
    keyed.emplace_back(keyed_hash(records[i].id, spec.seed), i);
  std::sort(keyed.begin(), keyed.end());

  std::vector<int> bucket(records.size());
  for (std::size_t rank = 0; rank < keyed.size(); ++rank)
    bucket[keyed[rank].second] = rank < sizes[0] ? 0 : (rank < sizes[0] + sizes[1] ? 1 : 2);

  Splits out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& dst = bucket[i] == 0 ? out.train : (bucket[i] == 1 ? out.val : out.test);
    dst.push_back(records[i]);
  }
  return out;
}

nlohmann::json CorpusStats::to_json() const {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [len, count] : part_count_histogram) hist[std::to_string(len)] = count;
  return {{"n_raw", n_raw},
          {"n_after_clean_dedup", n_after_clean_dedup},
          {"n_unique_assembly_names", n_unique_assembly_names},
          {"part_count_histogram", hist}};
}

CorpusStats compute_stats(const std::vector<AssemblyRecord>& before,
                          const std::vector<AssemblyRecord>& after) {
  CorpusStats s;
  s.n_raw = before.size();
  s.n_after_clean_dedup = after.size();
  std::unordered_set<std::string> names;
  for (const auto& r : after) {
    names.insert(r.assembly_name);
    ++s.part_count_histogram[r.part_names.size()];
  }
  s.n_unique_assembly_names = names.size();
  return s;
}

AssemblyRecord record_from_json(const nlohmann::json& j, std::size_t line_number) {
  if (!j.is_object()) throw DataError("expected a JSON object");
  AssemblyRecord r;
  if (!j.contains("assembly_name") || !j.at("assembly_name").is_string())
    throw DataError("missing string field 'assembly_name'");
  r.assembly_name = j.at("assembly_name").get<std::string>();
  if (!j.contains("part_names") || !j.at("part_names").is_array())
    throw DataError("missing array field 'part_names'");
  for (const auto& p : j.at("part_names")) {
    if (!p.is_string()) throw DataError("'part_names' must contain only strings");
    r.part_names.push_back(p.get<std::string>());
  }
  if (j.contains("description")) {
    if (!j.at("description").is_string()) throw DataError("'description' must be a string");
    r.description = j.at("description").get<std::string>();
  }
  if (j.contains("id")) {
    if (!j.at("id").is_string()) throw DataError("'id' must be a string");
    r.id = j.at("id").get<std::string>();
  } else {
    r.id = std::to_string(line_number);
  }
  return r;
}

nlohmann::json record_to_json(const AssemblyRecord& r) {
  nlohmann::json j = {{"id", r.id}, {"assembly_name", r.assembly_name}, {"part_names", r.part_names}};
  if (r.description) j["description"] = *r.description;
  return j;
}

LoadResult parse_corpus(std::string_view text) {
  LoadResult result;
  std::size_t line_number = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      result.records.push_back(record_from_json(nlohmann::json::parse(line), line_number));
    } catch (const nlohmann::json::exception& e) {
      result.errors.push_back({line_number, std::string("invalid JSON: ") + e.what()});
    } catch (const DataError& e) {
      result.errors.push_back({line_number, e.what()});
    }
  }
  return result;
}

LoadResult load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus(buf.str());
}

void save_corpus(const std::filesystem::path& path, const std::vector<AssemblyRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write corpus file: " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

std::string join_parts(const std::vector<std::string>& parts, std::size_t first, std::size_t last) {
  std::string out;
  for (std::size_t i = first; i < last && i < parts.size(); ++i) {
    if (i > first) out += ", ";
    out += parts[i];
  }
  return out;
}

std::string join_parts(const std::vector<std::string>& parts) {
  return join_parts(parts, 0, parts.size());
}

}  // namespace cadtext
