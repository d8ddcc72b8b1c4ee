#pragma once

// Word-level vocabulary and fixed-length encoding with BERT-style specials.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cadtext {

namespace special {
inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kUnk = 1;
inline constexpr std::int32_t kCls = 2;
inline constexpr std::int32_t kSep = 3;
inline constexpr std::int32_t kMask = 4;
inline constexpr std::int32_t kCount = 5;
}  // namespace special

// Splits on whitespace and detaches , : ; ' " ( ) as standalone tokens.
std::vector<std::string> pretokenize(std::string_view text);

class Vocab {
 public:
  Vocab();  // specials only

  // Tokens with frequency >= min_freq, most frequent first, ties in byte
  // order, capped so that size() <= max_size. Throws ConfigError when
  // max_size cannot hold the specials.
  static Vocab build(const std::vector<std::string>& texts, std::size_t min_freq,
                     std::size_t max_size);
  static Vocab from_tokens(const std::vector<std::string>& regular_tokens);

  std::size_t size() const { return id_to_token_.size(); }
  std::int32_t id(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  // Tokens after the specials, in id order.
  std::vector<std::string> regular_tokens() const;

  // Header line "#specials [PAD] [UNK] [CLS] [SEP] [MASK]", then one token per
  // line; line k (0-based, after the header) holds id kCount + k.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& o) const { return id_to_token_ == o.id_to_token_; }

 private:
  void add(std::string token);

  std::unordered_map<std::string, std::int32_t> token_to_id_;
  std::vector<std::string> id_to_token_;
};

struct TokenSequence {
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> segment_ids;
  std::vector<std::uint8_t> attention_mask;
  std::size_t true_length = 0;

  std::size_t max_len() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

// [CLS] a [SEP] b [SEP] [PAD]... ; the longer side loses tokens from its end
// (b on ties) until everything fits. Throws ConfigError if max_len < 8.
TokenSequence encode_pair(std::string_view a, std::string_view b, const Vocab& vocab,
                          std::size_t max_len);

// [CLS] tokens [SEP] [PAD]... with tail truncation. Throws ConfigError if max_len < 2.
TokenSequence encode_single(std::string_view text, const Vocab& vocab, std::size_t max_len);

// Non-special tokens of the sequence, space-joined.
std::string decode(const TokenSequence& seq, const Vocab& vocab);

}  // namespace cadtext
