#include "guild/agent/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "guild/tw/engine.hpp"

namespace guild::agent {

namespace {
constexpr int kTextWordBudget = 50;

bool word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '\'' || c == '[' ||
         c == ']';
}
}  // namespace

std::vector<std::string> Tokenizer::split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (word_char(c)) {
      cur.push_back(char(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

void Tokenizer::add(const std::string& word) {
  if (index_.emplace(word, int(words_.size())).second) words_.push_back(word);
}

Tokenizer::Tokenizer(const tw::GameSpec& spec) {
  add("[unk]");
  add("[room]");
  add("[inv]");
  add("[cmd]");
  add("[fb]");
  for (const auto& entry : spec.vocab)
    for (const auto& w : split_words(entry)) add(w);
  for (const auto& t : spec.templates) {
    for (const auto& v : t.verbs) add(v);
    for (const auto& p : t.prepositions) add(p);
  }

  // The most frequent remaining words of the room texts and fixed engine
  // phrases, so ordinary observations tokenize almost entirely in-vocabulary.
  std::map<std::string, int> freq;
  auto tally = [&](const std::string& text) {
    for (const auto& w : split_words(text))
      if (!index_.count(w)) freq[w] += 1;
  };
  for (const auto& room : spec.rooms) tally(room.description);
  for (const auto& phrase : tw::fixed_phrases()) tally(phrase);
  std::vector<std::pair<int, std::string>> ranked;
  for (const auto& [w, n] : freq) ranked.emplace_back(-n, w);
  std::sort(ranked.begin(), ranked.end());
  for (size_t i = 0; i < ranked.size() && i < kTextWordBudget; ++i) add(ranked[i].second);
}

int Tokenizer::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? unk() : it->second;
}

const std::vector<int>& Tokenizer::encode(const std::string& text) const {
  auto it = cache_.find(text);
  if (it != cache_.end()) return it->second;
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  if (ids.empty()) ids.push_back(unk());  // recurrent step still consumes one token
  return cache_.emplace(text, std::move(ids)).first->second;
}

}  // namespace guild::agent
