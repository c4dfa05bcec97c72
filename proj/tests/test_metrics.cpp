#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "ctrm/metrics.hpp"

using namespace ctrm::metrics;
namespace fs = std::filesystem;

namespace {

Tokens words(const std::string& text) {
  Tokens out;
  std::string w;
  for (char c : text) {
    if (c == ' ') {
      if (!w.empty()) out.push_back(w);
      w.clear();
    } else {
      w += c;
    }
  }
  if (!w.empty()) out.push_back(w);
  return out;
}

EvalCorpus single(const std::string& hyp, const std::string& ref) { return {{"0", words(hyp), {words(ref)}}}; }

EvalCorpus golden() { return read_corpus(fs::path(CTRM_TEST_DATA) / "golden_corpus.jsonl"); }

nlohmann::json frozen(const char* name) {
  std::ifstream in(fs::path(CTRM_TEST_DATA) / name);
  return nlohmann::json::parse(in);
}

EvalCorpus random_corpus(std::mt19937_64& rng, std::size_t n) {
  const Tokens vocab = words("a b c d e f then so because");
  std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1), len(1, 8);
  EvalCorpus corpus;
  for (std::size_t i = 0; i < n; ++i) {
    EvalEntry e{std::to_string(i), {}, {{}}};
    for (std::size_t k = len(rng); k > 0; --k) e.references[0].push_back(vocab[pick(rng)]);
    e.hypothesis = e.references[0];
    for (auto& w : e.hypothesis)
      if (pick(rng) < 3) w = vocab[pick(rng)];
    corpus.push_back(e);
  }
  return corpus;
}

}  // namespace

TEST(Bleu, PerfectMatchIsOne) {
  EXPECT_DOUBLE_EQ(bleu4({{"0", words("a b c d e"), {words("a b c d e")}},
                          {"1", words("x y z w"), {words("x y z w")}}}),
                   1.0);
}

TEST(Bleu, NoSharedFourGramIsZero) {
  EXPECT_EQ(bleu4(single("a b c d e", "a b c x d e")), 0.0);
  EXPECT_THROW(bleu4({}), std::invalid_argument);
}

TEST(Bleu, BrevityPenaltyUsesClosestReference) {
  // 4-word hypothesis, references of 6 and 3 words: 3 is closer, so no penalty applies.
  const EvalCorpus c{{"0", words("a b c d"), {words("a b c d e f"), words("a b c")}}};
  EXPECT_DOUBLE_EQ(bleu4(c), 1.0);
  // Only the 6-word reference: penalty exp(1 - 6/4).
  EXPECT_NEAR(bleu4(single("a b c d", "a b c d e f")), std::exp(1.0 - 6.0 / 4.0), 1e-15);
}

TEST(Rouge, Examples) {
  EXPECT_EQ(rougeL(single("a b c", "a b c")), 1.0);
  EXPECT_EQ(rougeL(single("x y", "a b c")), 0.0);
  EXPECT_EQ(rougeL_pair({}, words("a b")), 0.0);
  // LCS 2, P = 1, R = 2/3, beta = 1.2
  const double p = 1.0, r = 2.0 / 3.0, b2 = 1.2 * 1.2;
  EXPECT_NEAR(rougeL(single("a c", "a b c")), (1 + b2) * p * r / (r + b2 * p), 1e-15);
  EXPECT_NEAR(rougeL(single("a c", "a b c")), 0.7721518987341772, 1e-15);
}

TEST(Rouge, BestReferenceWins) {
  const EvalCorpus c{{"0", words("a b c"), {words("x y"), words("a b c d")}}};
  EXPECT_DOUBLE_EQ(rougeL(c), rougeL_pair(words("a b c"), words("a b c d")));
}

TEST(Cider, IdenticalDistinctCaptionsScoreTen) {
  const EvalCorpus c{{"0", words("ball rolls then stops"), {words("ball rolls then stops")}},
                     {"1", words("dog barks so cat runs"), {words("dog barks so cat runs")}},
                     {"2", words("glass breaks because ball rolls"), {words("glass breaks because ball rolls")}}};
  for (double s : cider_scores(c)) EXPECT_NEAR(s, 10.0, 1e-12);
  // Orders with no n-grams contribute nothing: a two-word caption keeps half the score.
  const EvalCorpus short_caps{{"0", words("ball rolls"), {words("ball rolls")}},
                              {"1", words("dog barks"), {words("dog barks")}}};
  for (double s : cider_scores(short_caps)) EXPECT_NEAR(s, 5.0, 1e-12);
}

TEST(Cider, NoSharedNgramsIsZero) {
  const EvalCorpus c{{"0", words("x y"), {words("ball rolls")}}, {"1", words("dog barks"), {words("dog barks")}}};
  EXPECT_EQ(cider_scores(c)[0], 0.0);
  EXPECT_THROW(cider(single("a", "a")), std::invalid_argument);
}

TEST(Golden, MatchesOracle) {
  const auto corpus = golden();
  ASSERT_EQ(corpus.size(), 20u);
  const auto want = frozen("golden_scores.json");
  const auto got = evaluate(corpus);
  EXPECT_NEAR(got.bleu4, want["bleu4"].get<double>(), 1e-9);
  EXPECT_NEAR(got.rougeL, want["rougeL"].get<double>(), 1e-9);
  EXPECT_NEAR(got.cider, want["cider"].get<double>(), 1e-6);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EXPECT_EQ(got.per_sample[i].id, want["per_sample"][i]["id"].get<std::string>());
    EXPECT_NEAR(got.per_sample[i].rougeL, want["per_sample"][i]["rougeL"].get<double>(), 1e-9);
    EXPECT_NEAR(got.per_sample[i].cider, want["per_sample"][i]["cider"].get<double>(), 1e-6);
  }
}

TEST(Golden, DoubledCorpusMatchesOracle) {
  auto corpus = golden();
  const auto n = corpus.size();
  for (std::size_t i = 0; i < n; ++i) {
    auto e = corpus[i];
    e.id += "-dup";
    corpus.push_back(e);
  }
  const auto want = frozen("golden_scores_doubled.json");
  EXPECT_NEAR(bleu4(corpus), want["bleu4"].get<double>(), 1e-9);
  EXPECT_NEAR(rougeL(corpus), want["rougeL"].get<double>(), 1e-9);
  EXPECT_NEAR(cider(corpus), want["cider"].get<double>(), 1e-6);
  EXPECT_NE(cider(corpus), cider(golden()));
}

TEST(Properties, OrderInvariance) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    auto c = trial == 0 ? golden() : random_corpus(rng, 12);
    const auto base = evaluate(c);
    std::shuffle(c.begin(), c.end(), rng);
    const auto shuffled = evaluate(c);
    EXPECT_NEAR(base.bleu4, shuffled.bleu4, 1e-15);
    EXPECT_NEAR(base.rougeL, shuffled.rougeL, 1e-15);
    EXPECT_NEAR(base.cider, shuffled.cider, 1e-12);
  }
}

TEST(Properties, Bounds) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const auto r = evaluate(random_corpus(rng, 8));
    EXPECT_GE(r.bleu4, 0.0);
    EXPECT_LE(r.bleu4, 1.0);
    EXPECT_GE(r.rougeL, 0.0);
    EXPECT_LE(r.rougeL, 1.0);
    EXPECT_GE(r.cider, 0.0);
  }
}

TEST(Properties, ReplacingWithReferenceNeverHurts) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    auto c = random_corpus(rng, 10);
    for (std::size_t i = 0; i < c.size(); ++i) {
      const auto before = evaluate(c);
      c[i].hypothesis = c[i].references[0];
      const auto after = evaluate(c);
      EXPECT_GE(after.bleu4, before.bleu4 - 1e-15);
      EXPECT_GE(after.rougeL, before.rougeL - 1e-15);
      EXPECT_GE(after.cider, before.cider - 1e-12);
    }
  }
}

TEST(CorpusFile, RoundTripAndValidation) {
  const auto path = fs::temp_directory_path() / "ctrm_test_corpus.jsonl";
  const auto c = golden();
  write_corpus(c, path);
  const auto back = read_corpus(path);
  ASSERT_EQ(back.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(back[i].id, c[i].id);
    EXPECT_EQ(back[i].hypothesis, c[i].hypothesis);
    EXPECT_EQ(back[i].references, c[i].references);
  }
  EXPECT_THROW(validate({{"a", {}, {}}}), std::invalid_argument);
  EXPECT_THROW(validate({{"a", {}, {words("x")}}, {"a", {}, {words("y")}}}), std::invalid_argument);
  EXPECT_THROW(validate({{"a", {}, {Tokens{}}}}), std::invalid_argument);
}
