#include "fine/tokenizer.hpp"

#include <cctype>

#include "fine/error.hpp"

namespace fine {

namespace {
const char* const kSpecialWords[] = {"<pad>", "<unk>", "<bos>", "<eos>"};
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Tokenizer::Tokenizer() {
  for (const char* w : kSpecialWords) add_word(w);
}

Tokenizer::Tokenizer(std::vector<std::string> words) {
  if (words.size() < kNumSpecial) throw InputError("tokenizer table is missing reserved words");
  for (std::size_t i = 0; i < kNumSpecial; ++i) {
    if (words[i] != kSpecialWords[i]) {
      throw InputError("tokenizer table entry " + std::to_string(i) + " must be " + kSpecialWords[i]);
    }
  }
  for (const auto& w : words) {
    if (contains(w)) throw InputError("duplicate tokenizer word '" + w + "'");
    add_word(w);
  }
}

Tokenizer Tokenizer::from_lines(std::span<const std::string> lines) {
  Tokenizer tok;
  for (const auto& line : lines) {
    for (const auto& w : split_words(line)) tok.add_word(w);
  }
  return tok;
}

TokenId Tokenizer::add_word(std::string_view word) {
  if (auto it = ids_.find(std::string(word)); it != ids_.end()) return it->second;
  const TokenId id = words_.size();
  words_.emplace_back(word);
  ids_.emplace(words_.back(), id);
  return id;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  for (const auto& w : split_words(text)) {
    auto it = ids_.find(w);
    if (it == ids_.end()) throw InputError("unknown word '" + w + "' in \"" + std::string(text) + "\"");
    out.push_back(it->second);
  }
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += word(ids[i]);
  }
  return out;
}

bool Tokenizer::contains(std::string_view word) const { return ids_.count(std::string(word)) != 0; }

TokenId Tokenizer::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  if (it == ids_.end()) throw InputError("unknown word '" + std::string(word) + "'");
  return it->second;
}

const std::string& Tokenizer::word(TokenId id) const {
  if (id >= words_.size()) throw InputError("token id " + std::to_string(id) + " outside vocabulary");
  return words_[id];
}

}  // namespace fine
