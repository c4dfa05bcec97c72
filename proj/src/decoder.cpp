#include "ctrm/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "ctrm/layers.hpp"

namespace ctrm {

void DecoderConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || ffn_dim == 0 || max_caption_len == 0 || beam_width == 0) {
    throw ConfigError("decoder: d_model, n_heads, ffn_dim, max_caption_len and beam_width must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("decoder: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  }
}

namespace {

std::string dec_layer(std::size_t l) { return "decoder.layer" + std::to_string(l); }

}  // namespace

void init_decoder(ParameterSet& params, const DecoderConfig& config, std::size_t vocab_size, Rng& rng) {
  config.validate();
  params["decoder.token_embedding"] = glorot_uniform(vocab_size, config.d_model, rng);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const auto p = dec_layer(l);
    layers::init_norm(params, p + ".norm1", config.d_model);
    layers::init_attention(params, p + ".self_attn", config.d_model, config.n_heads, rng);
    layers::init_norm(params, p + ".norm2", config.d_model);
    layers::init_attention(params, p + ".cross_attn", config.d_model, config.n_heads, rng);
    layers::init_norm(params, p + ".norm3", config.d_model);
    layers::init_feed_forward(params, p + ".ffn", config.d_model, config.ffn_dim, rng);
  }
  layers::init_norm(params, "decoder.final_norm", config.d_model);
  layers::init_linear(params, "decoder.output", config.d_model, vocab_size, rng);
}

Var decoder_logits(std::span<const TokenId> inputs, Var memory, const ParamVars& params, const DecoderConfig& config,
                   const PositionalEncoding& pe) {
  if (inputs.empty()) throw std::invalid_argument("decoder_logits: empty input sequence");
  if (inputs.front() != kBos) throw std::invalid_argument("decoder_logits: input must start with <bos>");
  if (inputs.size() > config.max_caption_len) {
    throw CapacityError("decoder_logits: " + std::to_string(inputs.size()) + " positions exceed max_caption_len " +
                        std::to_string(config.max_caption_len));
  }
  const auto table = params["decoder.token_embedding"];
  for (auto id : inputs) {
    if (id >= table.value().rows()) {
      throw VocabularyError("decoder_logits: token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(table.value().rows()));
    }
  }
  auto& tape = params.tape();
  auto x = ops::add(ops::embedding(table, inputs), tape.constant(pe.first(inputs.size())));
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const auto p = dec_layer(l);
    const auto h1 = layers::norm(x, params, p + ".norm1");
    x = ops::add(x, layers::attention(h1, h1, params, p + ".self_attn", config.n_heads, ops::Mask::lower_triangular)
                        .output);
    const auto h2 = layers::norm(x, params, p + ".norm2");
    x = ops::add(x, layers::attention(h2, memory, params, p + ".cross_attn", config.n_heads, ops::Mask::none).output);
    x = ops::add(x, layers::feed_forward(layers::norm(x, params, p + ".norm3"), params, p + ".ffn"));
  }
  x = layers::norm(x, params, "decoder.final_norm");
  return layers::linear(x, params, "decoder.output");
}

Tensor decoder_logits(std::span<const TokenId> inputs, const Tensor& memory, const ParameterSet& params,
                      const DecoderConfig& config) {
  config.validate();
  Tape tape(false);
  const ParamVars vars(tape, params);
  const PositionalEncoding pe(config.max_caption_len, config.d_model);
  return decoder_logits(inputs, tape.constant(memory), vars, config, pe).value();
}

Tensor log_softmax_rows(const Tensor& logits) {
  require_matrix(logits, "log_softmax_rows");
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double v : r) z += std::exp(v - m);
    const double lse = m + std::log(z);
    auto o = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) o[j] = r[j] - lse;
  }
  return out;
}

Hypothesis greedy_search(const NextTokenScorer& scorer, std::size_t max_len) {
  Hypothesis hyp;
  std::vector<TokenId> prefix{kBos};
  while (hyp.tokens.size() < max_len) {
    const auto lp = scorer(prefix);
    // max_element returns the first maximum, i.e. the lowest id on ties
    const auto best = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    hyp.tokens.push_back(best);
    hyp.log_prob += lp[best];
    if (best == kEos) break;
    prefix.push_back(best);
  }
  return hyp;
}

Hypothesis beam_search(const NextTokenScorer& scorer, std::size_t beam_width, std::size_t max_len) {
  if (beam_width == 0) throw std::invalid_argument("beam_search: beam_width must be >= 1");
  std::vector<Hypothesis> alive{Hypothesis{}};
  std::vector<Hypothesis> finished;
  const auto by_total = [](const Hypothesis& a, const Hypothesis& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
  };
  while (!alive.empty()) {
    std::vector<Hypothesis> candidates;
    for (const auto& h : alive) {
      std::vector<TokenId> prefix{kBos};
      prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
      const auto lp = scorer(prefix);
      for (TokenId t = 0; t < lp.size(); ++t) {
        Hypothesis next = h;
        next.tokens.push_back(t);
        next.log_prob += lp[t];
        candidates.push_back(std::move(next));
      }
    }
    const auto keep = std::min(beam_width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      by_total);
    alive.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      auto& c = candidates[i];
      if (c.tokens.back() == kEos || c.tokens.size() >= max_len) {
        finished.push_back(std::move(c));
      } else {
        alive.push_back(std::move(c));
      }
    }
  }
  return *std::min_element(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.score() != b.score()) return a.score() > b.score();
    return a.tokens < b.tokens;
  });
}

DecoderSession::DecoderSession(const Tensor& memory, const ParameterSet& params, const DecoderConfig& config)
    : vars_(tape_, params), config_(config), pe_(config.max_caption_len, config.d_model) {
  config_.validate();
  memory_ = tape_.constant(memory);
  mark_ = tape_.size();
}

std::vector<double> DecoderSession::next_log_probs(std::span<const TokenId> prefix) {
  const auto logits = decoder_logits(prefix, memory_, vars_, config_, pe_).value();
  const auto lp = log_softmax_rows(logits.slice_rows(logits.rows() - 1, logits.rows()));
  tape_.truncate(mark_);
  return {lp.data().begin(), lp.data().end()};
}

NextTokenScorer DecoderSession::scorer() {
  return [this](std::span<const TokenId> prefix) { return next_log_probs(prefix); };
}

Hypothesis greedy_decode(const Tensor& memory, const ParameterSet& params, const DecoderConfig& config) {
  DecoderSession session(memory, params, config);
  return greedy_search(session.scorer(), config.max_caption_len);
}

Hypothesis beam_decode(const Tensor& memory, const ParameterSet& params, const DecoderConfig& config) {
  DecoderSession session(memory, params, config);
  return beam_search(session.scorer(), config.beam_width, config.max_caption_len);
}

}  // namespace ctrm
