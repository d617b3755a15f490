#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "guild/tw/game_spec.hpp"

namespace guild::agent {

// Word-level tokenizer with a vocabulary fixed at construction: special field
// markers, every game word, every verb, and the most frequent words of the
// shipped text. Anything else becomes [unk]. Encodings are cached because the
// same observation strings recur constantly during training.
class Tokenizer {
 public:
  explicit Tokenizer(const tw::GameSpec& spec);

  int n_tokens() const { return int(words_.size()); }
  int unk() const { return 0; }
  int id(const std::string& word) const;  // unk() when absent
  const std::string& word(int id) const { return words_[size_t(id)]; }

  const std::vector<int>& encode(const std::string& text) const;

  static std::vector<std::string> split_words(const std::string& text);

 private:
  void add(const std::string& word);

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
  mutable std::unordered_map<std::string, std::vector<int>> cache_;
};

}  // namespace guild::agent
