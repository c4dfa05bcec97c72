// Acceptance run: one PASS/FAIL line per criterion.
//
//   ctrm_acceptance [--only 1,4,9] [--require 1,2,...]
//
// Exits non-zero when a criterion listed in --require fails (all of them by default).

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ctrm/gradcheck.hpp"
#include "ctrm/training.hpp"

using namespace ctrm;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 120.0;
constexpr int kGradSeeds = 20;
constexpr double kStochasticTolerance = 1e-9;
constexpr double kKlTolerance = 1e-9;
constexpr double kBleuRougeTolerance = 1e-9;
constexpr double kCiderTolerance = 1e-6;
constexpr double kRougeQuoted = 0.7774;
constexpr double kRougeQuotedTolerance = 5e-5;
constexpr double kOverfitLoss = 0.05;
constexpr int kOverfitEpochs = 300;
constexpr double kOverfitSeconds = 300.0;
constexpr double kBenchmarkSeconds = 1800.0;
constexpr double kJointTolerance = 1e-10;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

Outcome gradient_suite() {
  gradcheck::Options options;
  options.seeds = kGradSeeds;
  options.tolerance = kGradTolerance;
  const auto report = gradcheck::run(options);
  double worst = 0.0;
  std::string worst_name, failed;
  for (const auto& c : report.cases) {
    if (c.worst_error >= worst) worst = c.worst_error, worst_name = c.name;
    if (!c.passed) failed += " " + c.name;
  }
  Outcome o;
  o.pass = report.passed && report.seconds < kGradSeconds;
  o.detail = std::to_string(report.cases.size()) + " operations x " + std::to_string(kGradSeeds) +
             " seeds, worst " + fmt(worst, 3) + " (" + worst_name + "), " + fmt(report.seconds, 3) + " s" +
             (failed.empty() ? "" : ", failed:" + failed);
  return o;
}

Outcome attention_invariants() {
  Rng rng(2024);
  double worst_sum = 0.0;
  std::size_t above_diagonal_nonzero = 0, leaked_rows = 0, inputs = 0;
  for (int trial = 0; trial < 100; ++trial) {
    ModelConfig m;
    m.encoder.d_model = m.decoder.d_model = 16;
    const std::size_t heads[] = {1, 2, 4};
    m.encoder.n_heads = m.decoder.n_heads = heads[trial % 3];
    m.frame_dim = 6;
    m.vocab_size = 8;
    const auto params = init_parameters(m, static_cast<std::uint64_t>(trial));
    const std::size_t t = 1 + static_cast<std::size_t>(trial) % m.encoder.max_frames;
    const auto frames = uniform({t, 6}, rng, -4.0, 4.0);
    const auto out = cde_forward(frames, params, m.encoder);
    const auto& a = out.attention;
    for (std::size_t h = 0; h < m.encoder.n_heads; ++h)
      for (std::size_t i = 0; i < t; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < t; ++j) {
          const double v = a.data()[(h * t + i) * t + j];
          sum += v;
          if (j > i && v != 0.0) ++above_diagonal_nonzero;
        }
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      }
    // Perturb every frame after a random cut; rows up to the cut must not move.
    if (t > 1) {
      const std::size_t cut = std::uniform_int_distribution<std::size_t>(0, t - 2)(rng);
      auto changed = frames;
      for (std::size_t r = cut + 1; r < t; ++r)
        for (double& v : changed.row(r)) v += std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
      const auto moved = cde_forward(changed, params, m.encoder);
      for (std::size_t i = 0; i <= cut; ++i) {
        bool same = true;
        for (std::size_t c = 0; c < m.encoder.d_model; ++c) same = same && moved.embeddings(i, c) == out.embeddings(i, c);
        for (std::size_t h = 0; h < m.encoder.n_heads; ++h)
          for (std::size_t j = 0; j < t; ++j)
            same = same && moved.attention.data()[(h * t + i) * t + j] == a.data()[(h * t + i) * t + j];
        if (!same) ++leaked_rows;
      }
    }
    ++inputs;
  }
  Outcome o;
  o.pass = worst_sum <= kStochasticTolerance && above_diagonal_nonzero == 0 && leaked_rows == 0;
  o.detail = std::to_string(inputs) + " inputs, max |row sum - 1| " + fmt(worst_sum, 3) + ", nonzero above diagonal " +
             std::to_string(above_diagonal_nonzero) + ", rows changed by later frames " + std::to_string(leaked_rows);
  return o;
}

Outcome loss_identities() {
  Rng rng(7);
  std::vector<std::string> failures;

  // Contrastive with a single pair.
  LossWeights w;
  double worst_single = 0.0;
  for (int i = 0; i < 50; ++i) {
    const double v = losses::contrastive(uniform({1, 8}, rng), uniform({1, 8}, rng), w);
    worst_single = std::max(worst_single, std::abs(v));
  }
  if (worst_single != 0.0) failures.push_back("contrastive B=1 " + fmt(worst_single));

  // Finetune objective with zero lambdas against the caption objective.
  GeneratorConfig g;
  g.seed = 3;
  const auto data = generate_dataset(g, 6);
  ModelConfig m;
  m.frame_dim = g.d_v;
  m.vocab_size = caption_vocabulary().size();
  const auto params = init_parameters(m, 3);
  const PositionalTables tables(m);
  std::vector<const VideoSample*> batch;
  for (const auto& s : data) batch.push_back(&s);
  TrainConfig pre, fine;
  pre.stage = Stage::pretrain;
  fine.stage = Stage::finetune;
  fine.loss_weights.lambda1 = fine.loss_weights.lambda2 = 0.0;
  Tape t1, t2;
  const auto a = batch_objective(batch, ParamVars(t1, params), m, tables, pre);
  const auto b = batch_objective(batch, ParamVars(t2, params), m, tables, fine);
  const bool grads_equal = t1.gradient(a.total) == t2.gradient(b.total);
  if (a.values.total != b.values.total || !grads_equal) failures.push_back("zero-lambda finetune differs from caption loss");

  // Causal KL against attention set to the normalised annotation.
  double worst_kl = 0.0;
  for (const auto& s : generate_dataset(g, 40)) {
    const auto ann = s.annotation();
    const std::size_t t = ann.frames(), heads = 3;
    Tensor attn({heads, t, t});
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < t; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < t; ++j) total += ann.adjacency(i, j);
        for (std::size_t j = 0; j < t; ++j)
          attn.data()[(h * t + i) * t + j] = total > 0.0 ? ann.adjacency(i, j) / total : (j <= i ? 1.0 / (i + 1) : 0.0);
      }
    worst_kl = std::max(worst_kl, std::abs(losses::causal_alignment(attn, ann)));
  }
  if (worst_kl > kKlTolerance) failures.push_back("causal KL " + fmt(worst_kl));

  // Temporal loss on constant rows.
  double worst_temporal = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto row = uniform({1, 8}, rng, -5.0, 5.0);
    Tensor h({static_cast<std::size_t>(2 + i % 7), 8});
    for (std::size_t r = 0; r < h.rows(); ++r)
      for (std::size_t c = 0; c < 8; ++c) h(r, c) = row(0, c);
    worst_temporal = std::max(worst_temporal, losses::temporal_consistency(h));
  }
  if (worst_temporal != 0.0) failures.push_back("temporal on constant rows " + fmt(worst_temporal));

  Outcome o;
  o.pass = failures.empty();
  o.detail = "contrastive(B=1) max " + fmt(worst_single) + ", zero-lambda finetune bit-equal " +
             (a.values.total == b.values.total && grads_equal ? "yes" : "no") + ", causal KL max " + fmt(worst_kl, 3) +
             ", temporal(constant) max " + fmt(worst_temporal);
  for (const auto& f : failures) o.detail += "; " + f;
  return o;
}

Outcome metric_oracles() {
  const fs::path dir(CTRM_TEST_DATA);
  const auto corpus = metrics::read_corpus(dir / "golden_corpus.jsonl");
  std::ifstream in(dir / "golden_scores.json");
  const auto golden = nlohmann::json::parse(in);
  const auto r = metrics::evaluate(corpus);
  const double db = std::abs(r.bleu4 - golden["bleu4"].get<double>());
  const double dr = std::abs(r.rougeL - golden["rougeL"].get<double>());
  const double dc = std::abs(r.cider - golden["cider"].get<double>());
  const double example = metrics::rougeL_pair({"a", "c"}, {"a", "b", "c"});
  const bool example_ok = std::abs(example - kRougeQuoted) <= kRougeQuotedTolerance;
  Outcome o;
  o.pass = corpus.size() == 20 && db <= kBleuRougeTolerance && dr <= kBleuRougeTolerance && dc <= kCiderTolerance &&
           example_ok;
  o.detail = std::to_string(corpus.size()) + " pairs, |dBLEU| " + fmt(db, 3) + " |dROUGE| " + fmt(dr, 3) + " |dCIDEr| " +
             fmt(dc, 3) + "; ROUGE-L(\"a c\", \"a b c\") = " + fmt(example) + " vs quoted " + fmt(kRougeQuoted) +
             (example_ok ? "" : " (quoted example not reproduced)");
  return o;
}

Outcome overfit() {
  const auto t0 = Clock::now();
  GeneratorConfig g;
  g.seed = 11;
  const auto data = generate_dataset(g, 8);
  ModelConfig m;
  m.frame_dim = g.d_v;
  m.vocab_size = caption_vocabulary().size();
  TrainConfig c;
  c.stage = Stage::pretrain;
  c.epochs = kOverfitEpochs;
  c.batch_size = 8;
  c.learning_rate = 3e-3;
  c.seed = 11;
  const auto r = run_stage(c, data, initial_checkpoint(m, caption_vocabulary(), c.seed));
  int first_below = -1;
  for (const auto& e : r.trace)
    if (first_below < 0 && *e.mean.caption < kOverfitLoss) first_below = e.epoch + 1;
  const double final_loss = *r.trace.back().mean.caption;
  const auto eval = evaluate(r.checkpoint, data, Decoding::greedy);
  int exact = 0;
  for (std::size_t i = 0; i < data.size(); ++i) exact += eval.hypotheses[i] == caption_words(data[i]) ? 1 : 0;
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = final_loss < kOverfitLoss && first_below > 0 && exact == 8 && secs < kOverfitSeconds;
  o.detail = "caption loss " + fmt(*r.trace.front().mean.caption, 4) + " -> " + fmt(final_loss, 4) +
             ", first below " + fmt(kOverfitLoss) + " at epoch " + std::to_string(first_below) + ", greedy exact " +
             std::to_string(exact) + "/8, " + fmt(secs, 3) + " s";
  return o;
}

struct BenchRun {
  double bleu4 = 0.0;
  double connective = 0.0;
};

struct Benchmark {
  std::map<std::string, std::vector<BenchRun>> runs;
  std::map<std::string, std::vector<BenchRun>> sweep;
  double seconds = 0.0;
};

const std::vector<std::string> kVariants{"full", "disable_cde", "disable_trl", "disable_ctrm"};
constexpr int kBenchSeeds = 5;

Benchmark benchmark() {
  const auto t0 = Clock::now();
  Benchmark b;
  for (int seed = 0; seed < kBenchSeeds; ++seed) {
    GeneratorConfig g;
    g.seed = static_cast<std::uint64_t>(seed);
    g.causal_edge_prob = 0.5;
    const auto all = generate_dataset(g, 512);
    const std::vector<VideoSample> train(all.begin(), all.begin() + 384), held(all.begin() + 384, all.end());
    ModelConfig m;
    m.frame_dim = g.d_v;
    m.vocab_size = caption_vocabulary().size();
    for (const auto& variant : kVariants) {
      TrainConfig c;
      c.batch_size = 16;
      c.learning_rate = 2e-3;
      c.seed = static_cast<std::uint64_t>(seed);
      if (variant != "full") c.ablation = Ablation::from_names({variant});
      c.stage = Stage::pretrain;
      c.epochs = 30;
      const auto pretrained = run_stage(c, train, initial_checkpoint(m, caption_vocabulary(), c.seed)).checkpoint;

      auto fine_tune = [&](double lambda) {
        auto f = c;
        f.stage = Stage::finetune;
        f.epochs = 15;
        f.loss_weights.lambda1 = f.loss_weights.lambda2 = lambda;
        const auto e = evaluate(run_stage(f, train, pretrained).checkpoint, held, Decoding::greedy);
        return BenchRun{e.metrics.bleu4, e.causal_connective_accuracy};
      };
      const auto main_run = fine_tune(LossWeights{}.lambda1);
      b.runs[variant].push_back(main_run);
      std::cerr << "  seed " << seed << " " << variant << " bleu4 " << fmt(main_run.bleu4, 4) << " connective "
                << fmt(main_run.connective, 4) << "\n";
      if (variant == "full" || variant == "disable_ctrm")
        for (double lambda : {0.0, 0.1}) b.sweep[variant + " lambda=" + fmt(lambda)].push_back(fine_tune(lambda));
    }
  }
  b.seconds = seconds_since(t0);
  return b;
}

double mean(const std::vector<BenchRun>& runs, double BenchRun::*field) {
  double s = 0.0;
  for (const auto& r : runs) s += r.*field;
  return s / static_cast<double>(runs.size());
}

Outcome ablation_direction(const Benchmark& b) {
  const double full = mean(b.runs.at("full"), &BenchRun::bleu4);
  const double no_cde = mean(b.runs.at("disable_cde"), &BenchRun::bleu4);
  const double no_trl = mean(b.runs.at("disable_trl"), &BenchRun::bleu4);
  const double no_ctrm = mean(b.runs.at("disable_ctrm"), &BenchRun::bleu4);
  int wins = 0;
  for (int s = 0; s < kBenchSeeds; ++s) wins += b.runs.at("full")[s].bleu4 > b.runs.at("disable_ctrm")[s].bleu4 ? 1 : 0;
  Outcome o;
  o.pass = full >= no_cde && full >= no_trl && full > no_ctrm && wins >= 4 && b.seconds < kBenchmarkSeconds;
  o.detail = "mean BLEU-4 full " + fmt(full, 4) + ", w/o-CDE " + fmt(no_cde, 4) + ", w/o-TRL " + fmt(no_trl, 4) +
             ", w/o-CTRM " + fmt(no_ctrm, 4) + "; full > w/o-CTRM in " + std::to_string(wins) + "/5 seeds; " +
             fmt(b.seconds, 4) + " s";
  return o;
}

Outcome causality_direction(const Benchmark& b) {
  const double full = mean(b.runs.at("full"), &BenchRun::connective);
  const double no_ctrm = mean(b.runs.at("disable_ctrm"), &BenchRun::connective);
  Outcome o;
  o.pass = full > no_ctrm;
  o.detail = "mean causal-connective accuracy full " + fmt(full, 4) + " vs w/o-CTRM " + fmt(no_ctrm, 4);
  return o;
}

ModelConfig small_model() {
  ModelConfig m;
  m.encoder.d_model = m.decoder.d_model = 8;
  m.encoder.n_heads = m.decoder.n_heads = 2;
  m.encoder.ffn_dim = m.decoder.ffn_dim = 16;
  m.encoder.n_trl_layers = m.decoder.n_layers = 1;
  m.frame_dim = 6;
  m.vocab_size = caption_vocabulary().size();
  return m;
}

Outcome determinism_and_resume() {
  GeneratorConfig g;
  g.seed = 21;
  g.d_v = 6;
  g.events_per_video = {2, 3};
  const auto train = generate_dataset(g, 12);
  g.seed = 22;
  const auto held = generate_dataset(g, 6);
  std::vector<TrainConfig> stages(3);
  const Stage order[] = {Stage::pretrain, Stage::finetune, Stage::contrastive};
  for (int i = 0; i < 3; ++i) {
    stages[i].stage = order[i];
    stages[i].epochs = 2;
    stages[i].batch_size = 4;
    stages[i].learning_rate = 3e-3;
    stages[i].seed = 5;
  }
  const auto a = run_pipeline(stages, small_model(), train, held);
  const auto b = run_pipeline(stages, small_model(), train, held);
  const bool identical = a.checkpoint == b.checkpoint && a.report == b.report;

  const auto base = fs::temp_directory_path() / "ctrm_acceptance_resume";
  int mismatches = 0, resumes = 0;
  for (int budget = 1; budget <= 6; ++budget) {
    PipelineOptions options;
    options.checkpoint_dir = base / std::to_string(budget);
    fs::remove_all(*options.checkpoint_dir);
    options.max_epochs = budget;
    PipelineResult r;
    int calls = 0;
    do {
      r = run_pipeline(stages, small_model(), train, held, options);
      ++calls;
    } while (!r.finished && calls < 20);
    resumes += calls - 1;
    if (!r.finished || r.report != a.report || r.checkpoint.params != a.checkpoint.params) ++mismatches;
  }
  fs::remove_all(base);
  Outcome o;
  o.pass = identical && mismatches == 0;
  o.detail = std::string("same-seed checkpoints bit-identical ") + (identical ? "yes" : "no") + ", " +
             std::to_string(resumes) + " resumes across 6 interruption budgets, report mismatches " +
             std::to_string(mismatches);
  return o;
}

Outcome joint_consistency() {
  GeneratorConfig g;
  g.seed = 31;
  g.d_v = 6;
  g.events_per_video = {2, 3};
  const auto data = generate_dataset(g, 6);
  const auto model = small_model();
  const auto ckpt = initial_checkpoint(model, caption_vocabulary(), 31);
  TrainConfig config;
  config.stage = Stage::joint;
  config.epochs = 1;
  config.batch_size = static_cast<int>(data.size());
  config.learning_rate = 0.0;
  config.loss_weights = {0.6, 0.4, 0.2};

  double caption = 0.0, causal = 0.0, temporal = 0.0;
  Tensor video({data.size(), model.encoder.d_model}), text({data.size(), model.encoder.d_model});
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    const auto memory = encode_frames(s.frames, ckpt.params, model);
    const std::vector<TokenId> inputs(s.caption.begin(), s.caption.end() - 1);
    const std::vector<TokenId> targets(s.caption.begin() + 1, s.caption.end());
    caption += losses::caption_cross_entropy(decoder_logits(inputs, memory, ckpt.params, model.decoder), targets);
    causal += losses::causal_alignment(cde_forward(s.frames, ckpt.params, model.encoder).attention, s.annotation());
    temporal += losses::temporal_consistency(memory);
    Tape tape(false);
    const ParamVars vars(tape, ckpt.params);
    const auto v = video_embedding(tape.constant(memory), vars).value();
    const auto t = text_embedding(s.caption, vars).value();
    for (std::size_t c = 0; c < v.size(); ++c) video(i, c) = v[c], text(i, c) = t[c];
  }
  const double n = static_cast<double>(data.size());
  caption /= n, causal /= n, temporal /= n;
  const double contrast = losses::contrastive(video, text, config.loss_weights);
  const double expected = caption + losses::finetune(caption, causal, temporal, config.loss_weights) + contrast;
  const double reported = run_stage(config, data, ckpt).trace.at(0).mean.total;
  const double diff = std::abs(reported - expected);
  Outcome o;
  o.pass = diff <= kJointTolerance;
  o.detail = "reported " + fmt(reported, 15) + ", independent sum " + fmt(expected, 15) + ", |diff| " + fmt(diff, 3);
  return o;
}

std::set<int> parse_list(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only{1, 2, 3, 4, 5, 6, 7, 8, 9}, require = only;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--only") only = parse_list(argv[i + 1]);
    else if (flag == "--require") require = parse_list(argv[i + 1]);
  }

  bool required_ok = true;
  auto report = [&](int n, const std::string& name, const Outcome& o) {
    std::cout << "criterion " << n << " " << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
    if (!o.pass && require.contains(n)) required_ok = false;
  };

  if (only.contains(1)) report(1, "gradient suite", gradient_suite());
  if (only.contains(2)) report(2, "attention invariants", attention_invariants());
  if (only.contains(3)) report(3, "loss identities", loss_identities());
  if (only.contains(4)) report(4, "metric oracles", metric_oracles());
  if (only.contains(5)) report(5, "overfit", overfit());
  if (only.contains(6) || only.contains(7)) {
    const auto b = benchmark();
    if (only.contains(6)) report(6, "ablation direction", ablation_direction(b));
    if (only.contains(7)) report(7, "causality proxy direction", causality_direction(b));
    for (const auto& [name, runs] : b.sweep)
      std::cout << "  supplementary " << name << ": mean BLEU-4 " << fmt(mean(runs, &BenchRun::bleu4), 4)
                << ", causal-connective accuracy " << fmt(mean(runs, &BenchRun::connective), 4) << std::endl;
  }
  if (only.contains(8)) report(8, "determinism and resume", determinism_and_resume());
  if (only.contains(9)) report(9, "joint objective consistency", joint_consistency());
  return required_ok ? 0 : 1;
}
