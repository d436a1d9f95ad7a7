#ifndef MRES_TOKENIZER_HPP
#define MRES_TOKENIZER_HPP

#include <map>
#include <string>
#include <vector>

#include "mres/errors.hpp"

namespace mres {

// Maximum sentence lengths, counting the [SOS] and [EOS] tokens.
inline constexpr int kMaxTextLenDefault = 17;
inline constexpr int kMaxTextLenLong = 22;  // long-expression profile (RefCOCOg-style)

struct ExpressionTokens {
  std::vector<int> ids;  // fixed length max_len
  int true_length = 0;   // SOS + body + EOS
  int sos_id = 0;
  int eos_id = 0;
  int pad_id = 0;
};

/// Maps expression text to body token ids (no SOS/EOS/padding). The special
/// ids 0..3 are reserved; backends hand out ids from 4 upward.
class TokenizerBackend {
 public:
  virtual ~TokenizerBackend() = default;
  virtual std::vector<int> encode_body(const std::string& expression) const = 0;
  virtual int vocab_size() const = 0;
};

/// Whitespace + lowercase vocabulary with fixed special ids. Word tokens are
/// stored sorted so a vocabulary built from the same corpus is always
/// identical.
class Vocabulary : public TokenizerBackend {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kSosId = 1;
  static constexpr int kEosId = 2;
  static constexpr int kUnkId = 3;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words);

  static Vocabulary build(const std::vector<std::string>& expressions);

  int id_of(const std::string& word) const;
  int size() const { return static_cast<int>(words_.size()) + 4; }
  const std::vector<std::string>& words() const { return words_; }

  std::vector<int> encode_body(const std::string& expression) const override;
  int vocab_size() const override { return size(); }

 private:
  std::vector<std::string> words_;          // sorted, unique, lowercase
  std::map<std::string, int> word_to_id_;
};

/// Lowercased whitespace word split of an expression.
std::vector<std::string> split_words(const std::string& expression);

/// SOS + body + EOS padded to max_len. Bodies longer than max_len-2 are
/// truncated so the EOS always fits.
ExpressionTokens tokenize(const std::string& expression, const TokenizerBackend& backend,
                          int max_len = kMaxTextLenDefault);

}  // namespace mres

#endif  // MRES_TOKENIZER_HPP
