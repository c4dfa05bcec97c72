#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ctrm/encoder.hpp"
#include "ctrm/params.hpp"
#include "ctrm/vocabulary.hpp"

namespace ctrm {

struct DecoderConfig {
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 64;
  /// Upper bound on decoder input positions and on generated tokens.
  std::size_t max_caption_len = 24;
  std::size_t beam_width = 3;

  void validate() const;
  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

void init_decoder(ParameterSet& params, const DecoderConfig& config, std::size_t vocab_size, Rng& rng);

/// Teacher-forced logits [N x |V|] for decoder inputs `inputs` (starting with
/// <bos>) attending to `memory` [T x d_model]. Row i depends only on inputs[0..i].
Var decoder_logits(std::span<const TokenId> inputs, Var memory, const ParamVars& params, const DecoderConfig& config,
                   const PositionalEncoding& pe);

/// Value-level wrapper over the tape version.
Tensor decoder_logits(std::span<const TokenId> inputs, const Tensor& memory, const ParameterSet& params,
                      const DecoderConfig& config);

/// Row-wise log-softmax of a logits matrix.
Tensor log_softmax_rows(const Tensor& logits);

struct Hypothesis {
  /// Generated tokens, <bos> excluded, terminal <eos> included when emitted.
  std::vector<TokenId> tokens;
  double log_prob = 0.0;

  /// Length-normalised log-probability.
  double score() const { return tokens.empty() ? 0.0 : log_prob / static_cast<double>(tokens.size()); }
};

/// Log-probabilities of the next token given a prefix that starts with <bos>.
using NextTokenScorer = std::function<std::vector<double>(std::span<const TokenId> prefix)>;

/// Argmax decoding; ties go to the lowest id.
Hypothesis greedy_search(const NextTokenScorer& scorer, std::size_t max_len);

/// Beam search over total log-probability, finished hypotheses ranked by
/// length-normalised score; ties resolved lexicographically by token ids.
Hypothesis beam_search(const NextTokenScorer& scorer, std::size_t beam_width, std::size_t max_len);

/// Incremental decoding against fixed temporal embeddings. Parameters are bound
/// once to a non-recording tape.
class DecoderSession {
 public:
  DecoderSession(const Tensor& memory, const ParameterSet& params, const DecoderConfig& config);

  std::vector<double> next_log_probs(std::span<const TokenId> prefix);
  NextTokenScorer scorer();

 private:
  Tape tape_{false};
  ParamVars vars_;
  Var memory_;
  DecoderConfig config_;
  PositionalEncoding pe_;
  std::size_t mark_;
};

Hypothesis greedy_decode(const Tensor& memory, const ParameterSet& params, const DecoderConfig& config);
Hypothesis beam_decode(const Tensor& memory, const ParameterSet& params, const DecoderConfig& config);

}  // namespace ctrm
