#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ctrm::metrics {

using Tokens = std::vector<std::string>;

struct EvalEntry {
  std::string id;
  Tokens hypothesis;
  std::vector<Tokens> references;
};

/// Ids are unique and every entry carries at least one non-empty reference.
using EvalCorpus = std::vector<EvalEntry>;

void validate(const EvalCorpus& corpus);

struct SampleScore {
  std::string id;
  double rougeL = 0.0;
  double cider = 0.0;
};

struct MetricReport {
  double bleu4 = 0.0;
  double rougeL = 0.0;
  double cider = 0.0;
  std::vector<SampleScore> per_sample;
};

/// Corpus BLEU-4: clipped n-gram precisions for n = 1..4, geometric mean,
/// closest-reference-length brevity penalty, no smoothing.
double bleu4(const EvalCorpus& corpus);

inline constexpr double kRougeBeta = 1.2;

/// LCS F-measure of one hypothesis against one reference.
double rougeL_pair(const Tokens& hypothesis, const Tokens& reference);
/// Best reference per sample, averaged over samples.
double rougeL(const EvalCorpus& corpus);

inline constexpr double kCiderSigma = 6.0;

/// Per-sample CIDEr-D scores in corpus order. Document frequencies come from
/// the references; needs at least two samples.
std::vector<double> cider_scores(const EvalCorpus& corpus);
double cider(const EvalCorpus& corpus);

MetricReport evaluate(const EvalCorpus& corpus);

/// Lines of {"id", "hypothesis", "references"}.
EvalCorpus read_corpus(const std::filesystem::path& path);
void write_corpus(const EvalCorpus& corpus, const std::filesystem::path& path);

nlohmann::json to_json(const MetricReport& report, bool include_per_sample = true);

}  // namespace ctrm::metrics
