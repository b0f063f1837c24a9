#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sinlg {

using TokenId = std::int32_t;

// Lowercases and splits on whitespace and ASCII punctuation. Punctuation
// characters are kept as single-character tokens.
std::vector<std::string> split_words(std::string_view text);

struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<int> mask;  // 1 on real tokens, 0 on PAD

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  // Appends PAD positions until the sequence has `length` entries.
  void pad_to(std::size_t length);
};

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kReservedCount = 4;

  Vocabulary();
  // Non-reserved tokens in the given order; duplicates are ignored.
  explicit Vocabulary(const std::vector<std::string>& tokens);
  // Collects every token of `texts`, sorted lexicographically.
  static Vocabulary from_texts(const std::vector<std::string>& texts);

  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const { return tokens_.size(); }
  // Non-reserved tokens in id order.
  std::vector<std::string> regular_tokens() const;

  TokenSequence tokenize(std::string_view text) const;
  std::vector<TokenId> encode_words(std::string_view text) const;

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace sinlg
