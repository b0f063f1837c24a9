#include "sinlg/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

namespace sinlg {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&]() {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isspace(ch)) {
      flush();
    } else if (ch < 0x80 && std::ispunct(ch)) {
      flush();
      out.emplace_back(1, raw);
    } else {
      current.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  flush();
  return out;
}

void TokenSequence::pad_to(std::size_t length) {
  while (ids.size() < length) {
    ids.push_back(Vocabulary::kPad);
    mask.push_back(0);
  }
}

Vocabulary::Vocabulary() {
  for (const char* reserved : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add(reserved);
}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) : Vocabulary() {
  for (const auto& t : tokens) {
    if (!ids_.contains(t)) add(t);
  }
}

Vocabulary Vocabulary::from_texts(const std::vector<std::string>& texts) {
  std::set<std::string> seen;
  for (const auto& text : texts) {
    for (auto& w : split_words(text)) seen.insert(std::move(w));
  }
  return Vocabulary(std::vector<std::string>(seen.begin(), seen.end()));
}

void Vocabulary::add(const std::string& token) {
  ids_.emplace(token, static_cast<TokenId>(tokens_.size()));
  tokens_.push_back(token);
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end() || it->second < kReservedCount) return kUnk;
  return it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("Vocabulary::token: id out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const { return id(token) != kUnk; }

std::vector<std::string> Vocabulary::regular_tokens() const {
  return std::vector<std::string>(tokens_.begin() + kReservedCount, tokens_.end());
}

std::vector<TokenId> Vocabulary::encode_words(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

TokenSequence Vocabulary::tokenize(std::string_view text) const {
  TokenSequence seq;
  seq.ids = encode_words(text);
  seq.mask.assign(seq.ids.size(), 1);
  return seq;
}

}  // namespace sinlg
