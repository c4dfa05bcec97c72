#include "ctrm/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ctrm/errors.hpp"

namespace ctrm::metrics {

namespace {

using json = nlohmann::json;
using NgramCounts = std::map<Tokens, double>;

constexpr std::size_t kMaxOrder = 4;

NgramCounts ngrams(const Tokens& words, std::size_t order) {
  NgramCounts counts;
  for (std::size_t i = 0; i + order <= words.size(); ++i) {
    counts[Tokens(words.begin() + static_cast<std::ptrdiff_t>(i), words.begin() + static_cast<std::ptrdiff_t>(i + order))] += 1.0;
  }
  return counts;
}

void require_non_empty(const EvalCorpus& corpus, const char* metric) {
  if (corpus.empty()) throw std::invalid_argument(std::string(metric) + ": empty corpus");
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

void validate(const EvalCorpus& corpus) {
  std::set<std::string> ids;
  for (const auto& e : corpus) {
    if (!ids.insert(e.id).second) throw std::invalid_argument("duplicate sample id '" + e.id + "'");
    if (e.references.empty()) throw std::invalid_argument("sample '" + e.id + "' has no references");
    for (const auto& r : e.references)
      if (r.empty()) throw std::invalid_argument("sample '" + e.id + "' has an empty reference");
  }
}

double bleu4(const EvalCorpus& corpus) {
  require_non_empty(corpus, "bleu4");
  validate(corpus);
  std::array<double, kMaxOrder> matched{};
  std::array<double, kMaxOrder> total{};
  double hyp_len = 0.0;
  double ref_len = 0.0;
  for (const auto& e : corpus) {
    const auto h = static_cast<double>(e.hypothesis.size());
    hyp_len += h;
    // closest reference length, shorter one on ties
    double best = static_cast<double>(e.references.front().size());
    for (const auto& r : e.references) {
      const auto len = static_cast<double>(r.size());
      if (std::abs(len - h) < std::abs(best - h) || (std::abs(len - h) == std::abs(best - h) && len < best)) best = len;
    }
    ref_len += best;
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
      const auto hyp = ngrams(e.hypothesis, n);
      NgramCounts ceiling;
      for (const auto& r : e.references)
        for (const auto& [g, c] : ngrams(r, n)) ceiling[g] = std::max(ceiling[g], c);
      for (const auto& [g, c] : hyp) {
        const auto it = ceiling.find(g);
        if (it != ceiling.end()) matched[n - 1] += std::min(c, it->second);
        total[n - 1] += c;
      }
    }
  }
  double log_sum = 0.0;
  for (std::size_t n = 0; n < kMaxOrder; ++n) {
    if (total[n] == 0.0 || matched[n] == 0.0) return 0.0;
    log_sum += std::log(matched[n] / total[n]);
  }
  const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(kMaxOrder));
}

double rougeL_pair(const Tokens& hypothesis, const Tokens& reference) {
  if (hypothesis.empty() || reference.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(hypothesis, reference));
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(hypothesis.size());
  const double recall = lcs / static_cast<double>(reference.size());
  const double beta2 = kRougeBeta * kRougeBeta;
  return (1.0 + beta2) * precision * recall / (recall + beta2 * precision);
}

double rougeL(const EvalCorpus& corpus) {
  require_non_empty(corpus, "rougeL");
  validate(corpus);
  double total = 0.0;
  for (const auto& e : corpus) {
    double best = 0.0;
    for (const auto& r : e.references) best = std::max(best, rougeL_pair(e.hypothesis, r));
    total += best;
  }
  return total / static_cast<double>(corpus.size());
}

namespace {

struct TfIdf {
  std::array<std::map<Tokens, double>, kMaxOrder> weights;
  std::array<double, kMaxOrder> norms{};
  double length = 0.0;
};

TfIdf tfidf(const Tokens& words, const std::map<Tokens, double>& df, double log_docs) {
  TfIdf v;
  v.length = static_cast<double>(words.size());
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    for (const auto& [g, tf] : ngrams(words, n)) {
      const auto it = df.find(g);
      const double idf = log_docs - std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
      const double w = tf * idf;
      v.weights[n - 1][g] = w;
      v.norms[n - 1] += w * w;
    }
  }
  for (auto& x : v.norms) x = std::sqrt(x);
  return v;
}

double cider_similarity(const TfIdf& hyp, const TfIdf& ref) {
  const double delta = hyp.length - ref.length;
  const double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
  double total = 0.0;
  for (std::size_t n = 0; n < kMaxOrder; ++n) {
    double dot = 0.0;
    for (const auto& [g, w] : hyp.weights[n]) {
      const auto it = ref.weights[n].find(g);
      if (it != ref.weights[n].end()) dot += std::min(w, it->second) * it->second;
    }
    if (hyp.norms[n] != 0.0 && ref.norms[n] != 0.0) dot /= hyp.norms[n] * ref.norms[n];
    total += dot * penalty;
  }
  return total;
}

}  // namespace

std::vector<double> cider_scores(const EvalCorpus& corpus) {
  validate(corpus);
  if (corpus.size() < 2) throw std::invalid_argument("cider: needs at least two samples for document frequencies");
  std::map<Tokens, double> df;
  for (const auto& e : corpus) {
    std::set<Tokens> seen;
    for (const auto& r : e.references)
      for (std::size_t n = 1; n <= kMaxOrder; ++n)
        for (const auto& [g, c] : ngrams(r, n)) seen.insert(g);
    for (const auto& g : seen) df[g] += 1.0;
  }
  const double log_docs = std::log(static_cast<double>(corpus.size()));
  std::vector<double> scores;
  scores.reserve(corpus.size());
  for (const auto& e : corpus) {
    const auto hyp = tfidf(e.hypothesis, df, log_docs);
    double sum = 0.0;
    for (const auto& r : e.references) sum += cider_similarity(hyp, tfidf(r, df, log_docs));
    scores.push_back(sum / static_cast<double>(kMaxOrder) / static_cast<double>(e.references.size()) * 10.0);
  }
  return scores;
}

double cider(const EvalCorpus& corpus) {
  const auto scores = cider_scores(corpus);
  double total = 0.0;
  for (double s : scores) total += s;
  return total / static_cast<double>(scores.size());
}

MetricReport evaluate(const EvalCorpus& corpus) {
  MetricReport report;
  report.bleu4 = bleu4(corpus);
  report.rougeL = rougeL(corpus);
  const auto c = cider_scores(corpus);
  double total = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    double best = 0.0;
    for (const auto& r : corpus[i].references) best = std::max(best, rougeL_pair(corpus[i].hypothesis, r));
    report.per_sample.push_back({corpus[i].id, best, c[i]});
    total += c[i];
  }
  report.cider = total / static_cast<double>(corpus.size());
  return report;
}

EvalCorpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  EvalCorpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      corpus.push_back({j.at("id").get<std::string>(), j.at("hypothesis").get<Tokens>(),
                        j.at("references").get<std::vector<Tokens>>()});
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return corpus;
}

void write_corpus(const EvalCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  for (const auto& e : corpus) out << json{{"id", e.id}, {"hypothesis", e.hypothesis}, {"references", e.references}}.dump() << '\n';
}

nlohmann::json to_json(const MetricReport& report, bool include_per_sample) {
  json j{{"bleu4", report.bleu4}, {"rougeL", report.rougeL}, {"cider", report.cider}};
  if (include_per_sample) {
    json per = json::array();
    for (const auto& s : report.per_sample) per.push_back({{"id", s.id}, {"rougeL", s.rougeL}, {"cider", s.cider}});
    j["per_sample"] = std::move(per);
  }
  return j;
}

}  // namespace ctrm::metrics
