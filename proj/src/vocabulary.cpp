#include "ctrm/vocabulary.hpp"

namespace ctrm {

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& words) : tokens_{"<pad>", "<bos>", "<eos>", "<unk>"} {
  for (TokenId i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], i);
  for (const auto& w : words) {
    if (!ids_.emplace(w, tokens_.size()).second) throw std::invalid_argument("duplicate vocabulary token '" + w + "'");
    tokens_.push_back(w);
  }
}

TokenId Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
  }
  return tokens_[id];
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> words) const {
  std::vector<TokenId> ids{kBos};
  for (const auto& w : words) ids.push_back(id(w));
  ids.push_back(kEos);
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> words;
  for (auto id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    words.push_back(token(id));
  }
  return words;
}

std::string Vocabulary::join(std::span<const TokenId> ids) const {
  std::string out;
  for (const auto& w : decode(ids)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace ctrm
