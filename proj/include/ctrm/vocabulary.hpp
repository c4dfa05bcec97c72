#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctrm {

using TokenId = std::size_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;

class VocabularyError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Bijective token <-> id map. Ids 0..3 are always <pad>, <bos>, <eos>, <unk>.
class Vocabulary {
 public:
  Vocabulary();
  /// Reserved tokens followed by `words` in the given order; duplicates are an error.
  explicit Vocabulary(const std::vector<std::string>& words);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool contains(const std::string& token) const { return ids_.contains(token); }
  /// Unknown words map to <unk>.
  TokenId id(const std::string& token) const;
  const std::string& token(TokenId id) const;

  /// <bos> w1 ... wn <eos>
  std::vector<TokenId> encode(std::span<const std::string> words) const;
  /// Drops reserved tokens, stopping at the first <eos>.
  std::vector<std::string> decode(std::span<const TokenId> ids) const;
  std::string join(std::span<const TokenId> ids) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, TokenId> ids_;
};

}  // namespace ctrm
