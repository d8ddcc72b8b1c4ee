#include "cadtext/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "cadtext/errors.hpp"

namespace cadtext {

namespace {

constexpr std::string_view kSpecialNames[special::kCount] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                             "[MASK]"};
constexpr std::string_view kHeaderTag = "#specials";

bool is_punct_token(char c) {
  return c == ',' || c == ':' || c == ';' || c == '\'' || c == '"' || c == '(' || c == ')';
}

std::vector<std::int32_t> to_ids(std::string_view text, const Vocab& vocab) {
  std::vector<std::int32_t> ids;
  for (const auto& t : pretokenize(text)) ids.push_back(vocab.id(t));
  return ids;
}

TokenSequence make_sequence(std::size_t max_len) {
  TokenSequence s;
  s.ids.assign(max_len, special::kPad);
  s.segment_ids.assign(max_len, 0);
  s.attention_mask.assign(max_len, 0);
  return s;
}

void push(TokenSequence& s, std::int32_t id, std::uint8_t segment) {
  s.ids[s.true_length] = id;
  s.segment_ids[s.true_length] = segment;
  s.attention_mask[s.true_length] = 1;
  ++s.true_length;
}

}  // namespace

std::vector<std::string> pretokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_punct_token(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

Vocab::Vocab() {
  for (auto name : kSpecialNames) add(std::string(name));
}

void Vocab::add(std::string token) {
  token_to_id_.emplace(token, static_cast<std::int32_t>(id_to_token_.size()));
  id_to_token_.push_back(std::move(token));
}

Vocab Vocab::build(const std::vector<std::string>& texts, std::size_t min_freq, std::size_t max_size) {
  if (max_size < static_cast<std::size_t>(special::kCount))
    throw ConfigError("vocabulary max_size must be at least " + std::to_string(special::kCount));
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto& tok : pretokenize(t)) ++counts[std::move(tok)];

  Vocab v;
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts)
    if (n >= std::max<std::size_t>(min_freq, 1) && !v.token_to_id_.contains(tok))
      ranked.emplace_back(tok, n);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  const std::size_t room = max_size - special::kCount;
  if (ranked.size() > room) ranked.resize(room);
  for (auto& [tok, n] : ranked) v.add(std::move(tok));
  return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& regular_tokens) {
  Vocab v;
  for (const auto& t : regular_tokens) {
    if (v.token_to_id_.contains(t)) throw DataError("duplicate vocabulary token '" + t + "'");
    v.add(t);
  }
  return v;
}

std::int32_t Vocab::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  if (it == token_to_id_.end() || it->second < special::kCount) return special::kUnk;
  return it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw DataError("token id out of range: " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocab::regular_tokens() const {
  return {id_to_token_.begin() + special::kCount, id_to_token_.end()};
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write vocabulary: " + path.string());
  out << kHeaderTag;
  for (auto name : kSpecialNames) out << ' ' << name;
  out << '\n';
  for (std::size_t i = special::kCount; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocabulary: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind(kHeaderTag, 0) != 0)
    throw DataError("vocabulary file lacks the '#specials' header: " + path.string());
  std::string expected(kHeaderTag);
  for (auto name : kSpecialNames) expected += " " + std::string(name);
  if (line != expected) throw DataError("unsupported special-token order in " + path.string());
  std::vector<std::string> tokens;
  while (std::getline(in, line)) tokens.push_back(line);
  return from_tokens(tokens);
}

TokenSequence encode_pair(std::string_view a, std::string_view b, const Vocab& vocab,
                          std::size_t max_len) {
  if (max_len < 8) throw ConfigError("encode_pair needs max_len >= 8");
  auto ids_a = to_ids(a, vocab);
  auto ids_b = to_ids(b, vocab);
  while (ids_a.size() + ids_b.size() + 3 > max_len) {
    if (ids_a.size() > ids_b.size())
      ids_a.pop_back();
    else
      ids_b.pop_back();
  }
  auto s = make_sequence(max_len);
  push(s, special::kCls, 0);
  for (auto id : ids_a) push(s, id, 0);
  push(s, special::kSep, 0);
  for (auto id : ids_b) push(s, id, 1);
  push(s, special::kSep, 1);
  return s;
}

TokenSequence encode_single(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 2) throw ConfigError("encode_single needs max_len >= 2");
  auto ids = to_ids(text, vocab);
  if (ids.size() + 2 > max_len) ids.resize(max_len - 2);
  auto s = make_sequence(max_len);
  push(s, special::kCls, 0);
  for (auto id : ids) push(s, id, 0);
  push(s, special::kSep, 0);
  return s;
}

std::string decode(const TokenSequence& seq, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < seq.true_length; ++i) {
    const auto id = seq.ids[i];
    if (id < special::kCount && id != special::kUnk) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

}  // namespace cadtext
