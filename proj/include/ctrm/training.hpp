#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrm/checkpoint.hpp"
#include "ctrm/dataset.hpp"
#include "ctrm/losses.hpp"
#include "ctrm/metrics.hpp"
#include "ctrm/model.hpp"

namespace ctrm {

enum class Stage { pretrain, finetune, contrastive, joint };

std::string to_string(Stage stage);
Stage parse_stage(const std::string& text);

/// Component switches for ablation runs. `disable_ctrm` implies both
/// submodule switches.
struct Ablation {
  bool disable_cde = false;
  bool disable_trl = false;
  bool disable_ctrm = false;

  EncoderAblation encoder() const {
    return {disable_cde || disable_ctrm, disable_trl || disable_ctrm};
  }
  std::vector<std::string> names() const;
  static Ablation from_names(const std::vector<std::string>& names);
  friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct TrainConfig {
  Stage stage = Stage::pretrain;
  int epochs = 10;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::optional<double> grad_clip_norm = 1.0;
  LossWeights loss_weights;
  Ablation ablation;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamState {
  ParameterSet first_moment;
  ParameterSet second_moment;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every parameter that has a gradient.
void adam_step(ParameterSet& params, const ParameterSet& grads, AdamState& state, const TrainConfig& config);

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`; returns the norm before clipping.
double clip_gradients(ParameterSet& grads, double max_norm);

/// Loss values of one batch. Components a stage does not optimise stay empty.
struct LossBreakdown {
  double total = 0.0;
  std::optional<double> caption;
  std::optional<double> causal;
  std::optional<double> temporal;
  std::optional<double> contrastive;
};

struct EpochLog {
  int epoch = 0;
  /// Means over the epoch's batches.
  LossBreakdown mean;
};

nlohmann::json to_json(const EpochLog& log);
EpochLog epoch_log_from_json(const nlohmann::json& j);

/// Tape-level batch objective. The returned breakdown holds the values of the
/// components that feed `total`.
struct BatchObjective {
  Var total;
  LossBreakdown values;
};

/// Builds the stage objective for `batch` on `params`' tape:
///   pretrain     caption cross-entropy
///   finetune     caption + lambda1 causal + lambda2 temporal
///   contrastive  video-to-text InfoNCE
///   joint        pretrain + finetune + contrastive terms
BatchObjective batch_objective(std::span<const VideoSample* const> batch, const ParamVars& params,
                               const ModelConfig& model, const PositionalTables& tables, const TrainConfig& config);

/// Fresh checkpoint for `model` with parameters drawn from `seed`.
Checkpoint initial_checkpoint(const ModelConfig& model, const Vocabulary& vocab, std::uint64_t seed);

struct StageOptions {
  /// Return early after this many epochs in this call (simulated interruption).
  std::optional<int> max_epochs;
  /// Called with the checkpoint after every finished epoch.
  std::function<void(const Checkpoint&)> on_epoch_end;
};

struct StageResult {
  Checkpoint checkpoint;
  /// Whole-stage trace, including epochs run before a resume.
  std::vector<EpochLog> trace;
  int epochs_run = 0;
  bool finished = false;
};

/// Runs (or resumes) one training stage. A checkpoint left mid-way through a
/// stage with the same configuration resumes from its next epoch; any other
/// checkpoint starts the stage with fresh optimiser moments.
StageResult run_stage(const TrainConfig& config, const std::vector<VideoSample>& dataset, Checkpoint init,
                      const StageOptions& options = {});

enum class Decoding { greedy, beam };
std::string to_string(Decoding decoding);
Decoding parse_decoding(const std::string& text);

struct Evaluation {
  metrics::MetricReport metrics;
  /// Among samples whose annotation has a non-chain edge: share of captions with "so"/"because".
  double causality_recall = 0.0;
  /// Share of samples where connective presence matches non-chain edge presence.
  double causal_connective_accuracy = 0.0;
  /// Share of captions whose event mentions all parse and follow the true event order.
  double temporal_consistency = 0.0;
  std::vector<std::vector<std::string>> hypotheses;
};

nlohmann::json to_json(const Evaluation& eval, bool include_per_sample = false);

/// Decodes every sample and scores it against its reference caption.
Evaluation evaluate(const Checkpoint& checkpoint, const std::vector<VideoSample>& dataset, Decoding decoding,
                    const Vocabulary& dataset_vocab = caption_vocabulary());

/// Reference captions as an evaluation corpus, with `hypotheses` (or the references themselves).
metrics::EvalCorpus reference_corpus(const std::vector<VideoSample>& dataset,
                                     const std::vector<std::vector<std::string>>* hypotheses = nullptr);

struct PipelineOptions {
  /// Where `latest.ckpt` is written after every epoch and resumed from.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Stop after this many epochs in this call.
  std::optional<int> max_epochs;
  Decoding decoding = Decoding::greedy;
};

struct PipelineResult {
  Checkpoint checkpoint;
  nlohmann::json report;
  bool finished = false;
};

/// Stages must be a subsequence of pretrain -> finetune -> contrastive, or a
/// single joint stage. Parameters are initialised from the first stage's seed.
void validate_stage_order(const std::vector<TrainConfig>& stages);

PipelineResult run_pipeline(const std::vector<TrainConfig>& stages, const ModelConfig& model,
                            const std::vector<VideoSample>& train, const std::vector<VideoSample>& eval,
                            const PipelineOptions& options = {});

}  // namespace ctrm
