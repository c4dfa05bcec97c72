#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "ctrm/decoder.hpp"
#include "ctrm/gradcheck.hpp"
#include "ctrm/model.hpp"
#include "oracle/reference_model.hpp"
#include "test_util.hpp"

using namespace ctrm;
using testutil::random_tensor;

namespace {

ModelConfig small_model(std::size_t vocab = 9, std::size_t max_len = 6) {
  ModelConfig m;
  m.encoder.d_model = m.decoder.d_model = 8;
  m.encoder.n_heads = m.decoder.n_heads = 2;
  m.encoder.ffn_dim = m.decoder.ffn_dim = 12;
  m.encoder.n_trl_layers = 1;
  m.decoder.n_layers = 2;
  m.decoder.max_caption_len = max_len;
  m.frame_dim = 4;
  m.vocab_size = vocab;
  return m;
}

std::vector<TokenId> random_inputs(std::size_t n, std::size_t vocab, Rng& rng) {
  std::vector<TokenId> ids{kBos};
  std::uniform_int_distribution<TokenId> u(0, vocab - 1);
  while (ids.size() < n) ids.push_back(u(rng));
  return ids;
}

// Scores the next token by the last one only; ids 0 and 1 act as words, 2 is <eos>.
std::vector<double> toy_scores(std::span<const TokenId> prefix) {
  std::vector<double> p;
  if (prefix.size() == 1) p = {0.5, 0.4, 0.1};
  else if (prefix.back() == 0) p = {0.35, 0.35, 0.3};
  else p = {0.05, 0.05, 0.9};
  for (auto& v : p) v = std::log(v);
  return p;
}

// Best length-normalised hypothesis over every sequence that ends in <eos> or reaches max_len.
Hypothesis exhaustive(const NextTokenScorer& scorer, std::size_t vocab, std::size_t max_len) {
  Hypothesis best;
  bool found = false;
  std::function<void(Hypothesis)> walk = [&](Hypothesis h) {
    if (!h.tokens.empty() && (h.tokens.back() == kEos || h.tokens.size() == max_len)) {
      if (!found || h.score() > best.score()) best = h;
      found = true;
      return;
    }
    std::vector<TokenId> prefix{kBos};
    prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
    const auto lp = scorer(prefix);
    for (TokenId t = 0; t < vocab; ++t) {
      auto next = h;
      next.tokens.push_back(t);
      next.log_prob += lp[t];
      walk(next);
    }
  };
  walk({});
  return best;
}

}  // namespace

TEST(DecoderLogits, MatchesLoopOracle) {
  auto m = small_model();
  m.decoder.n_layers = 1;
  const auto params = init_parameters(m, 0);
  Rng rng(0);
  const auto memory = random_tensor({2, 8}, rng);
  const std::vector<TokenId> inputs{kBos, 5, 7};
  const auto logits = decoder_logits(inputs, memory, params, m.decoder);
  const auto ref = oracle::decoder({kBos, 5, 7}, oracle::to_mat(memory), params, 2, 1);
  ASSERT_EQ(logits.shape(), (Shape{3, 9}));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t v = 0; v < 9; ++v) EXPECT_NEAR(logits(i, v), ref[i][v], 1e-10);
}

TEST(DecoderLogits, TwoLayerOracle) {
  const auto m = small_model();
  const auto params = init_parameters(m, 4);
  Rng rng(4);
  const auto memory = random_tensor({3, 8}, rng);
  const auto inputs = random_inputs(5, 9, rng);
  const auto logits = decoder_logits(inputs, memory, params, m.decoder);
  const auto ref = oracle::decoder(inputs, oracle::to_mat(memory), params, 2, 2);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t v = 0; v < 9; ++v) EXPECT_NEAR(logits(i, v), ref[i][v], 1e-10);
}

TEST(DecoderLogits, RowsIgnoreLaterInputs) {
  const auto m = small_model();
  const auto params = init_parameters(m, 1);
  Rng rng(1);
  const auto memory = random_tensor({3, 8}, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inputs = random_inputs(6, 9, rng);
    const auto base = decoder_logits(inputs, memory, params, m.decoder);
    const std::size_t j = 1 + static_cast<std::size_t>(trial) % 5;
    auto changed = inputs;
    changed[j] = (changed[j] + 1 + static_cast<std::size_t>(trial) % 8) % 9;
    const auto out = decoder_logits(changed, memory, params, m.decoder);
    for (std::size_t i = 0; i < j; ++i)
      for (std::size_t v = 0; v < 9; ++v) EXPECT_EQ(out(i, v), base(i, v));
    EXPECT_GT(max_abs_diff(out.slice_rows(j, j + 1), base.slice_rows(j, j + 1)), 0.0);
  }
}

TEST(DecoderLogits, ZeroOutputProjectionIsUniform) {
  auto m = small_model(5);
  auto params = init_parameters(m, 2);
  params["decoder.output.weight"] = Tensor(params["decoder.output.weight"].shape(), 0.0);
  params["decoder.output.bias"] = Tensor(params["decoder.output.bias"].shape(), 0.0);
  Rng rng(2);
  const std::vector<TokenId> inputs{kBos};
  const auto lp = log_softmax_rows(decoder_logits(inputs, random_tensor({2, 8}, rng), params, m.decoder));
  for (double v : lp.data()) EXPECT_NEAR(std::exp(v), 0.2, 1e-15);
}

TEST(DecoderLogits, SoftmaxRowsSumToOne) {
  const auto m = small_model();
  const auto params = init_parameters(m, 3);
  Rng rng(3);
  const auto lp = log_softmax_rows(decoder_logits(random_inputs(6, 9, rng), random_tensor({4, 8}, rng), params, m.decoder));
  for (std::size_t i = 0; i < lp.rows(); ++i) {
    double sum = 0.0;
    for (double v : lp.row(i)) sum += std::exp(v);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(DecoderLogits, Errors) {
  const auto m = small_model();
  const auto params = init_parameters(m, 0);
  const Tensor memory({2, 8}, 0.1);
  EXPECT_THROW(decoder_logits(std::vector<TokenId>{}, memory, params, m.decoder), std::invalid_argument);
  EXPECT_THROW(decoder_logits(std::vector<TokenId>{4, 5}, memory, params, m.decoder), std::invalid_argument);
  EXPECT_THROW(decoder_logits(std::vector<TokenId>{kBos, 9}, memory, params, m.decoder), VocabularyError);
  EXPECT_THROW(decoder_logits(std::vector<TokenId>(7, kBos), memory, params, m.decoder), CapacityError);
}

TEST(Decoding, LengthCapOfOne) {
  auto m = small_model(9, 2);
  const auto params = init_parameters(m, 5);
  m.decoder.max_caption_len = 1;
  Rng rng(5);
  const auto memory = random_tensor({3, 8}, rng);
  EXPECT_EQ(greedy_decode(memory, params, m.decoder).tokens.size(), 1u);
  EXPECT_EQ(beam_decode(memory, params, m.decoder).tokens.size(), 1u);
}

TEST(Decoding, BeamWidthOneIsGreedy) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto m = small_model(6, 6);
    m.decoder.beam_width = 1;
    const auto params = init_parameters(m, seed);
    Rng rng(seed);
    const auto memory = random_tensor({3, 8}, rng, -2.0, 2.0);
    const auto g = greedy_decode(memory, params, m.decoder);
    const auto b = beam_decode(memory, params, m.decoder);
    EXPECT_EQ(g.tokens, b.tokens) << "seed " << seed;
  }
}

TEST(Decoding, BeamScoreAtLeastGreedy) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto m = small_model(6, 6);
    m.decoder.beam_width = 3;
    const auto params = init_parameters(m, seed + 100);
    Rng rng(seed);
    const auto memory = random_tensor({3, 8}, rng, -2.0, 2.0);
    const auto g = greedy_decode(memory, params, m.decoder);
    const auto b = beam_decode(memory, params, m.decoder);
    EXPECT_GE(b.score(), g.score() - 1e-12) << "seed " << seed;
  }
}

TEST(Decoding, ToyModelBeamBeatsGreedy) {
  const NextTokenScorer scorer = toy_scores;
  const auto g = greedy_search(scorer, 4);
  const auto b = beam_search(scorer, 2, 4);
  const auto best = exhaustive(scorer, 3, 4);
  EXPECT_EQ(g.tokens, (std::vector<TokenId>{0, 0, 0, 0}));
  EXPECT_EQ(b.tokens, (std::vector<TokenId>{1, kEos}));
  EXPECT_EQ(b.tokens, best.tokens);
  EXPECT_NEAR(b.log_prob, std::log(0.4) + std::log(0.9), 1e-15);
  EXPECT_GT(b.score(), g.score());
  EXPECT_GT(b.log_prob, g.log_prob);
}

TEST(Decoding, TiesGoToLowestIds) {
  const NextTokenScorer flat = [](std::span<const TokenId>) { return std::vector<double>(4, std::log(0.25)); };
  EXPECT_EQ(greedy_search(flat, 3).tokens, (std::vector<TokenId>{0, 0, 0}));
  // Every finished hypothesis scores log(1/4); the lexicographically smallest wins.
  EXPECT_EQ(beam_search(flat, 3, 3).tokens, (std::vector<TokenId>{0, 0, 0}));
}

TEST(Decoding, GreedyLogProbMatchesTeacherForcing) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = small_model(7, 6);
    const auto params = init_parameters(m, seed);
    Rng rng(seed + 50);
    const auto memory = random_tensor({2, 8}, rng, -2.0, 2.0);
    for (const auto& hyp : {greedy_decode(memory, params, m.decoder), beam_decode(memory, params, m.decoder)}) {
      std::vector<TokenId> inputs{kBos};
      inputs.insert(inputs.end(), hyp.tokens.begin(), hyp.tokens.end() - 1);
      const auto lp = log_softmax_rows(decoder_logits(inputs, memory, params, m.decoder));
      double total = 0.0;
      for (std::size_t i = 0; i < hyp.tokens.size(); ++i) total += lp(i, hyp.tokens[i]);
      EXPECT_NEAR(total, hyp.log_prob, 1e-10);
    }
  }
}

TEST(Decoding, Deterministic) {
  const auto m = small_model();
  const auto params = init_parameters(m, 8);
  Rng rng(8);
  const auto memory = random_tensor({3, 8}, rng);
  EXPECT_EQ(greedy_decode(memory, params, m.decoder).tokens, greedy_decode(memory, params, m.decoder).tokens);
  EXPECT_EQ(beam_decode(memory, params, m.decoder).tokens, beam_decode(memory, params, m.decoder).tokens);
}

TEST(Decoder, GradientsMatchFiniteDifferences) {
  gradcheck::Options options;
  options.seeds = 5;
  options.only = {"decoder_logits", "cross_entropy"};
  const auto report = gradcheck::run(options);
  ASSERT_EQ(report.cases.size(), 2u);
  for (const auto& c : report.cases) EXPECT_TRUE(c.passed) << c.name << " " << c.worst_error;
}
