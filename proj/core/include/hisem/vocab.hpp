#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace hisem {

/// Token <-> id bijection with reserved ids PAD=0, BOS=1, EOS=2, UNK=3.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr std::size_t kReserved = 4;
  static constexpr std::size_t kNoMinimum = std::numeric_limits<std::size_t>::max();

  /// Reserved tokens only.
  Vocabulary();

  /// Tokens with frequency >= min_freq, ordered by (frequency desc, token asc)
  /// after the reserved ids.
  static Vocabulary build(const std::vector<std::string>& captions, std::size_t min_freq);
  /// Restores a vocabulary from its non-reserved tokens in id order.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  /// UNK for unknown tokens.
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }

  /// Word ids of a sentence, no BOS/EOS.
  std::vector<int> encode(const std::string& sentence) const;
  /// BOS, at most `max_words` word ids, EOS.
  std::vector<int> encode_caption(const std::string& sentence, std::size_t max_words) const;
  /// Joins word tokens, skipping PAD/BOS and stopping at EOS.
  std::string decode(std::span<const int> ids) const;

  /// Non-reserved tokens in id order.
  std::vector<std::string> word_tokens() const;

 private:
  void push(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace hisem
