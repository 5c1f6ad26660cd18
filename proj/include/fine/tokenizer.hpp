#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fine {

using TokenId = std::size_t;

// Whitespace word tokenizer over a closed vocabulary. Ids 0-3 are reserved.
class Tokenizer {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kBos = 2;
  static constexpr TokenId kEos = 3;
  static constexpr std::size_t kNumSpecial = 4;

  Tokenizer();
  // Rebuilds from a full word table (specials first), as stored in checkpoints.
  explicit Tokenizer(std::vector<std::string> words);

  // Vocabulary in first-appearance order over `lines`.
  static Tokenizer from_lines(std::span<const std::string> lines);

  TokenId add_word(std::string_view word);

  // Throws InputError naming the first word outside the vocabulary.
  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  bool contains(std::string_view word) const;
  TokenId id(std::string_view word) const;
  const std::string& word(TokenId id) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> ids_;
};

std::vector<std::string> split_words(std::string_view text);

}  // namespace fine
