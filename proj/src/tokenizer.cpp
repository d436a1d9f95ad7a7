#include "mres/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace mres {

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  std::sort(words_.begin(), words_.end());
  words_.erase(std::unique(words_.begin(), words_.end()), words_.end());
  for (std::size_t i = 0; i < words_.size(); ++i)
    word_to_id_[words_[i]] = static_cast<int>(i) + 4;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& expressions) {
  std::set<std::string> unique;
  for (const auto& e : expressions)
    for (const auto& w : split_words(e)) unique.insert(w);
  return Vocabulary(std::vector<std::string>(unique.begin(), unique.end()));
}

int Vocabulary::id_of(const std::string& word) const {
  auto it = word_to_id_.find(word);
  return it == word_to_id_.end() ? kUnkId : it->second;
}

std::vector<int> Vocabulary::encode_body(const std::string& expression) const {
  std::vector<int> ids;
  for (const auto& w : split_words(expression)) ids.push_back(id_of(w));
  return ids;
}

std::vector<std::string> split_words(const std::string& expression) {
  std::vector<std::string> words;
  std::istringstream stream(expression);
  std::string w;
  while (stream >> w) {
    std::transform(w.begin(), w.end(), w.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    words.push_back(w);
  }
  return words;
}

ExpressionTokens tokenize(const std::string& expression, const TokenizerBackend& backend,
                          int max_len) {
  if (max_len < 3)
    throw SchemaError("tokenize: max_len must be at least 3, got " + std::to_string(max_len));
  auto ids = backend.encode_body(expression);
  if (ids.empty()) throw EmptyExpression("tokenize: expression has no tokens");
  const auto body = static_cast<std::size_t>(max_len - 2);
  if (ids.size() > body) ids.resize(body);

  ExpressionTokens out;
  out.sos_id = Vocabulary::kSosId;
  out.eos_id = Vocabulary::kEosId;
  out.pad_id = Vocabulary::kPadId;
  out.ids.assign(static_cast<std::size_t>(max_len), Vocabulary::kPadId);
  out.ids[0] = Vocabulary::kSosId;
  for (std::size_t i = 0; i < ids.size(); ++i) out.ids[i + 1] = ids[i];
  out.ids[ids.size() + 1] = Vocabulary::kEosId;
  out.true_length = static_cast<int>(ids.size()) + 2;
  return out;
}

}  // namespace mres
