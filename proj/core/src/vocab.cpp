#include "hisem/vocab.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "hisem/text.hpp"

namespace hisem {

Vocabulary::Vocabulary() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) push(t);
}

void Vocabulary::push(const std::string& token) {
  if (ids_.count(token)) throw std::invalid_argument("duplicate vocabulary token: " + token);
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& captions, std::size_t min_freq) {
  std::map<std::string, std::size_t> freq;
  for (const auto& c : captions) {
    for (auto& t : tokenize(c)) ++freq[t];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, n] : freq) {
    if (n >= min_freq) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, n] : kept) v.push(tok);
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const auto& t : tokens) v.push(t);
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::string& sentence) const {
  std::vector<int> ids;
  for (const auto& t : tokenize(sentence)) ids.push_back(id(t));
  return ids;
}

std::vector<int> Vocabulary::encode_caption(const std::string& sentence, std::size_t max_words) const {
  std::vector<int> words = encode(sentence);
  if (words.size() > max_words) words.resize(max_words);
  std::vector<int> ids{kBos};
  ids.insert(ids.end(), words.begin(), words.end());
  ids.push_back(kEos);
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    words.push_back(token(id));
  }
  return join(words);
}

std::vector<std::string> Vocabulary::word_tokens() const {
  return {tokens_.begin() + static_cast<long>(kReserved), tokens_.end()};
}

}  // namespace hisem
