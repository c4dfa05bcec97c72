// ctrm command-line tool: data generation, training, evaluation, decoding and
// gradient verification.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctrm/config.hpp"
#include "ctrm/errors.hpp"
#include "ctrm/gradcheck.hpp"
#include "ctrm/metrics.hpp"
#include "ctrm/training.hpp"

namespace fs = std::filesystem;
using namespace ctrm;

namespace {

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
};

ExperimentConfig effective_config(const Globals& g) {
  const fs::path path(g.config_path);
  auto config = load_experiment(g.config_path.empty() ? nullptr : &path, g.overrides);
  std::cerr << "effective config: " << to_json(config).dump() << "\n";
  return config;
}

struct Split {
  std::vector<VideoSample> train;
  std::vector<VideoSample> eval;
};

Split load_split(const ExperimentConfig& config, const std::string& data_path) {
  auto all = data_path.empty() ? generate_dataset(config.data.generator, config.data.n_samples) : read_dataset(data_path);
  if (config.data.holdout >= all.size())
    throw ConfigError("data.holdout " + std::to_string(config.data.holdout) + " leaves no training samples");
  Split s;
  const auto cut = all.size() - config.data.holdout;
  s.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cut));
  s.eval.assign(all.begin() + static_cast<std::ptrdiff_t>(cut), all.end());
  if (s.eval.empty()) s.eval = s.train;
  return s;
}

void emit(const nlohmann::json& j, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << j.dump(2) << "\n";
}

nlohmann::json trace_json(const std::vector<EpochLog>& trace) {
  auto j = nlohmann::json::array();
  for (const auto& e : trace) j.push_back(to_json(e));
  return j;
}

int run_gen_data(const Globals& g, const std::string& out) {
  const auto config = effective_config(g);
  const auto samples = generate_dataset(config.data.generator, config.data.n_samples);
  write_dataset(samples, out);
  const auto stats = corpus_stats(samples);
  std::cout << "samples " << stats.samples << "  vocab_size " << stats.vocab_size << "  mean_caption_length "
            << std::fixed << std::setprecision(3) << stats.mean_caption_length << "  causal_samples "
            << stats.causal_samples << "\n";
  return 0;
}

int run_train(const Globals& g, const std::string& data, const std::string& init, const std::string& out,
              const std::string& report) {
  const auto config = effective_config(g);
  const auto split = load_split(config, data);
  Checkpoint start = init.empty() ? initial_checkpoint(config.model(), caption_vocabulary(), config.train.seed)
                                  : Checkpoint::load(init);
  auto result = run_stage(config.train, split.train, std::move(start));
  result.checkpoint.save(out);
  emit({{"stage", to_string(config.train.stage)}, {"step", result.checkpoint.step}, {"trace", trace_json(result.trace)}},
       report);
  return 0;
}

int run_pipeline_cmd(const Globals& g, const std::string& data, const std::string& checkpoint_dir,
                     const std::string& out, const std::string& report, std::optional<int> max_epochs) {
  const auto config = effective_config(g);
  const auto split = load_split(config, data);
  PipelineOptions options;
  if (!checkpoint_dir.empty()) options.checkpoint_dir = checkpoint_dir;
  options.max_epochs = max_epochs;
  options.decoding = config.decoding;
  auto result = run_pipeline(config.pipeline, config.model(), split.train, split.eval, options);
  if (!result.finished) {
    std::cerr << "pipeline interrupted; resume with the same --checkpoint-dir\n";
    return 0;
  }
  if (!out.empty()) result.checkpoint.save(out);
  emit(result.report, report);
  return 0;
}

int run_eval(const Globals& g, const std::string& checkpoint, const std::string& data, const std::string& corpus,
             bool per_sample) {
  if (!corpus.empty()) {
    emit(metrics::to_json(metrics::evaluate(metrics::read_corpus(corpus)), per_sample), "");
    return 0;
  }
  if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint (with --data) or --corpus");
  const auto config = effective_config(g);
  const auto ckpt = Checkpoint::load(checkpoint);
  const auto samples = data.empty() ? load_split(config, "").eval : read_dataset(data);
  emit(to_json(evaluate(ckpt, samples, config.decoding), per_sample), "");
  return 0;
}

int run_caption(const Globals& g, const std::string& checkpoint, const std::string& data, std::size_t index) {
  const auto config = effective_config(g);
  const auto ckpt = Checkpoint::load(checkpoint);
  const auto samples = data.empty() ? load_split(config, "").eval : read_dataset(data);
  if (index >= samples.size())
    throw ConfigError("--index " + std::to_string(index) + " out of range for " + std::to_string(samples.size()) +
                      " samples");
  Ablation ablation;
  if (auto it = ckpt.state.find("ablation"); it != ckpt.state.end())
    ablation = Ablation::from_names(it->get<std::vector<std::string>>());
  const auto memory = encode_frames(samples[index].frames, ckpt.params, ckpt.model, ablation.encoder());
  const auto hyp = config.decoding == Decoding::greedy ? greedy_decode(memory, ckpt.params, ckpt.model.decoder)
                                                       : beam_decode(memory, ckpt.params, ckpt.model.decoder);

  // Per-token log-probabilities by teacher-forcing the decoded tokens.
  std::vector<TokenId> inputs{kBos};
  inputs.insert(inputs.end(), hyp.tokens.begin(), hyp.tokens.end());
  inputs.pop_back();
  const auto logp = log_softmax_rows(decoder_logits(inputs, memory, ckpt.params, ckpt.model.decoder));
  const Vocabulary vocab(std::vector<std::string>(ckpt.vocabulary.begin() + kUnk + 1, ckpt.vocabulary.end()));

  std::cout << vocab.join(hyp.tokens) << "\n";
  for (std::size_t i = 0; i < hyp.tokens.size(); ++i) {
    std::cout << vocab.token(hyp.tokens[i]) << "\t" << std::setprecision(6) << std::fixed << logp(i, hyp.tokens[i])
              << "\n";
  }
  return 0;
}

int run_grad_check(int seeds, const std::vector<std::string>& only, const std::string& corrupt) {
  gradcheck::Options options;
  options.seeds = seeds;
  options.only = only;
  options.corrupt_case = corrupt;
  const auto report = gradcheck::run(options);
  std::cout << std::left << std::setw(24) << "operation" << std::setw(14) << "worst_rel_err"
            << std::setw(8) << "kinks" << "status\n";
  for (const auto& c : report.cases) {
    std::cout << std::setw(24) << c.name << std::setw(14) << std::scientific << std::setprecision(3) << c.worst_error
              << std::setw(8) << c.kinks_skipped << (c.passed ? "ok" : "FAIL") << "\n";
  }
  std::cout << (report.passed ? "PASS" : "FAIL") << " " << report.cases.size() << " operations, " << options.seeds
            << " seeds, " << std::fixed << std::setprecision(1) << report.seconds << " s\n";
  for (const auto& c : report.cases)
    if (!c.passed) std::cerr << "gradient check failed for " << c.name << " at " << c.worst_input << "\n";
  return report.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal-temporal video captioning toolkit"};
  app.require_subcommand(1);
  Globals g;
  auto with_config = [&g](CLI::App* sub) {
    sub->add_option("-c,--config", g.config_path, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("-s,--set", g.overrides, "Config override key=value (repeatable)");
    return sub;
  };

  std::string out, data, init, report, checkpoint, checkpoint_dir, corpus, corrupt;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_samples;
  std::optional<int> max_epochs;
  std::size_t index = 0;
  bool per_sample = false;
  int seeds = 20;
  std::vector<std::string> only;

  auto* gen = with_config(app.add_subcommand("gen-data", "Generate a synthetic dataset"));
  gen->add_option("-o,--out", out, "Output JSONL path")->required();
  gen->add_option("--seed", seed, "Shortcut for --set data.seed=N");
  gen->add_option("--n-samples", n_samples, "Shortcut for --set data.n_samples=N");

  auto* train = with_config(app.add_subcommand("train", "Run one training stage"));
  train->add_option("-d,--data", data, "Dataset JSONL (default: generate from config)");
  train->add_option("--init", init, "Start from this checkpoint");
  train->add_option("-o,--out", out, "Checkpoint to write")->required();
  train->add_option("--report", report, "Write the loss trace here instead of stdout");

  auto* pipe = with_config(app.add_subcommand("pipeline", "Run the configured stage sequence and evaluate"));
  pipe->add_option("-d,--data", data, "Dataset JSONL (default: generate from config)");
  pipe->add_option("--checkpoint-dir", checkpoint_dir, "Save latest.ckpt here every epoch and resume from it");
  pipe->add_option("-o,--out", out, "Final checkpoint");
  pipe->add_option("--report", report, "Write the report here instead of stdout");
  pipe->add_option("--max-epochs", max_epochs, "Stop after this many epochs in this invocation");

  auto* eval = with_config(app.add_subcommand("eval", "Score a checkpoint on a dataset, or a caption corpus"));
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to decode with");
  eval->add_option("-d,--data", data, "Dataset JSONL (default: generated held-out split)");
  eval->add_option("--corpus", corpus, "JSONL of {id, hypothesis, references}");
  eval->add_flag("--per-sample", per_sample, "Include per-sample scores");

  auto* cap = with_config(app.add_subcommand("caption", "Decode one sample"));
  cap->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  cap->add_option("-d,--data", data, "Dataset JSONL (default: generated held-out split)");
  cap->add_option("-i,--index", index, "Sample index");

  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  grad->add_option("--seeds", seeds, "Random instances per operation")->check(CLI::PositiveNumber);
  grad->add_option("--only", only, "Restrict to these operations");
  grad->add_option("--corrupt", corrupt, "Perturb the analytic gradient of this operation")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (seed) g.overrides.push_back("data.seed=" + std::to_string(*seed));
    if (n_samples) g.overrides.push_back("data.n_samples=" + std::to_string(*n_samples));
    if (*gen) return run_gen_data(g, out);
    if (*train) return run_train(g, data, init, out, report);
    if (*pipe) return run_pipeline_cmd(g, data, checkpoint_dir, out, report, max_epochs);
    if (*eval) return run_eval(g, checkpoint, data, corpus, per_sample);
    if (*cap) return run_caption(g, checkpoint, data, index);
    if (*grad) return run_grad_check(seeds, only, corrupt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
