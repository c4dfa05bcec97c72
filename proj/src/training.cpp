#include "ctrm/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctrm/config.hpp"
#include "ctrm/errors.hpp"
#include "ctrm/ops.hpp"

namespace ctrm {

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::pretrain: return "pretrain";
    case Stage::finetune: return "finetune";
    case Stage::contrastive: return "contrastive";
    case Stage::joint: return "joint";
  }
  return "?";
}

Stage parse_stage(const std::string& text) {
  for (Stage s : {Stage::pretrain, Stage::finetune, Stage::contrastive, Stage::joint})
    if (to_string(s) == text) return s;
  throw ConfigError("stage must be pretrain, finetune, contrastive or joint, got '" + text + "'");
}

std::string to_string(Decoding decoding) { return decoding == Decoding::greedy ? "greedy" : "beam"; }

Decoding parse_decoding(const std::string& text) {
  if (text == "greedy") return Decoding::greedy;
  if (text == "beam") return Decoding::beam;
  throw ConfigError("decoding must be 'greedy' or 'beam', got '" + text + "'");
}

std::vector<std::string> Ablation::names() const {
  std::vector<std::string> out;
  if (disable_cde) out.emplace_back("disable_cde");
  if (disable_trl) out.emplace_back("disable_trl");
  if (disable_ctrm) out.emplace_back("disable_ctrm");
  return out;
}

Ablation Ablation::from_names(const std::vector<std::string>& names) {
  Ablation a;
  for (const auto& n : names) {
    if (n == "disable_cde") {
      a.disable_cde = true;
    } else if (n == "disable_trl") {
      a.disable_trl = true;
    } else if (n == "disable_ctrm") {
      a.disable_ctrm = true;
    } else {
      throw ConfigError("unknown ablation '" + n + "' (expected disable_cde, disable_trl or disable_ctrm)");
    }
  }
  return a;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("train.learning_rate must be finite and non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("train.adam_beta1/adam_beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (grad_clip_norm && !(*grad_clip_norm > 0.0)) throw ConfigError("train.grad_clip_norm must be positive or null");
  loss_weights.validate();
}

void adam_step(ParameterSet& params, const ParameterSet& grads, AdamState& state, const TrainConfig& config) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.adam_beta1, t);
  const double correction2 = 1.0 - std::pow(config.adam_beta2, t);
  for (const auto& [name, g] : grads) {
    auto& p = params.at(name);
    if (p.shape() != g.shape()) throw ShapeError("gradient shape mismatch for " + name);
    auto& m = state.first_moment.try_emplace(name, p.shape(), 0.0).first->second;
    auto& v = state.second_moment.try_emplace(name, p.shape(), 0.0).first->second;
    auto pd = p.data();
    auto md = m.data();
    auto vd = v.data();
    const auto gd = g.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      md[i] = config.adam_beta1 * md[i] + (1.0 - config.adam_beta1) * gd[i];
      vd[i] = config.adam_beta2 * vd[i] + (1.0 - config.adam_beta2) * gd[i] * gd[i];
      const double m_hat = md[i] / correction1;
      const double v_hat = vd[i] / correction2;
      pd[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
  }
}

double clip_gradients(ParameterSet& grads, double max_norm) {
  const double norm = std::sqrt(squared_norm(grads));
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [_, g] : grads)
      for (double& x : g.data()) x *= factor;
  }
  return norm;
}

namespace {

nlohmann::json breakdown_json(const LossBreakdown& b) {
  nlohmann::json j{{"total", b.total}};
  if (b.caption) j["caption"] = *b.caption;
  if (b.causal) j["causal"] = *b.causal;
  if (b.temporal) j["temporal"] = *b.temporal;
  if (b.contrastive) j["contrastive"] = *b.contrastive;
  return j;
}

std::optional<double> optional_number(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) return std::nullopt;
  return it->get<double>();
}

Var mean_of(std::vector<Var>& parts) {
  return ops::scale(ops::add_all(parts), 1.0 / static_cast<double>(parts.size()));
}

void accumulate(std::optional<double>& into, const std::optional<double>& v) {
  if (v) into = into.value_or(0.0) + *v;
}

void divide(std::optional<double>& x, double n) {
  if (x) *x /= n;
}

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  // splitmix64 finaliser over (seed, epoch)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(epoch) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

void check_dataset(const std::vector<VideoSample>& dataset, const ModelConfig& model) {
  if (dataset.empty()) throw std::invalid_argument("dataset is empty");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset[i];
    if (s.frames.cols() != model.frame_dim) {
      throw SchemaError("sample " + std::to_string(i) + " has frame width " + std::to_string(s.frames.cols()) +
                        ", model expects " + std::to_string(model.frame_dim));
    }
    for (auto id : s.caption)
      if (id >= model.vocab_size) throw SchemaError("sample " + std::to_string(i) + " has a token outside the vocabulary");
  }
}

Vocabulary vocabulary_of(const Checkpoint& c) {
  if (c.vocabulary.size() < kUnk + 1) throw SchemaError("checkpoint vocabulary lacks the reserved tokens");
  return Vocabulary(std::vector<std::string>(c.vocabulary.begin() + kUnk + 1, c.vocabulary.end()));
}

}  // namespace

nlohmann::json to_json(const EpochLog& log) {
  auto j = breakdown_json(log.mean);
  j["epoch"] = log.epoch;
  return j;
}

EpochLog epoch_log_from_json(const nlohmann::json& j) {
  EpochLog log;
  log.epoch = j.at("epoch").get<int>();
  log.mean.total = j.at("total").get<double>();
  log.mean.caption = optional_number(j, "caption");
  log.mean.causal = optional_number(j, "causal");
  log.mean.temporal = optional_number(j, "temporal");
  log.mean.contrastive = optional_number(j, "contrastive");
  return log;
}

BatchObjective batch_objective(std::span<const VideoSample* const> batch, const ParamVars& params,
                               const ModelConfig& model, const PositionalTables& tables, const TrainConfig& config) {
  if (batch.empty()) throw std::invalid_argument("batch_objective: empty batch");
  const bool wants_caption = config.stage != Stage::contrastive;
  const bool wants_aux = config.stage == Stage::finetune || config.stage == Stage::joint;
  const bool wants_contrast = config.stage == Stage::contrastive || config.stage == Stage::joint;
  const auto ablation = config.ablation.encoder();

  std::vector<Var> captions, causals, temporals, videos, texts;
  for (const VideoSample* s : batch) {
    EncoderVars enc;
    if (wants_caption) {
      auto g = forward_sample(*s, params, model, tables, ablation);
      captions.push_back(losses::caption_cross_entropy(g.logits, g.targets));
      enc = std::move(g.encoder);
    } else {
      enc = encode(params.tape().constant(s->frames), params, model.encoder, tables.frames, ablation);
    }
    if (wants_aux) {
      causals.push_back(enc.attention.empty()
                            ? params.tape().constant(Tensor::scalar(0.0))
                            : losses::causal_alignment(enc.attention, s->annotation()));
      temporals.push_back(losses::temporal_consistency(enc.temporal));
    }
    if (wants_contrast) {
      videos.push_back(video_embedding(enc.temporal, params));
      texts.push_back(text_embedding(s->caption, params));
    }
  }

  BatchObjective out;
  std::optional<Var> caption, causal, temporal, contrast;
  if (wants_caption) {
    caption = mean_of(captions);
    out.values.caption = caption->value().item();
  }
  if (wants_aux) {
    causal = mean_of(causals);
    temporal = mean_of(temporals);
    out.values.causal = causal->value().item();
    out.values.temporal = temporal->value().item();
  }
  if (wants_contrast) {
    contrast = losses::contrastive(ops::concat_rows(videos), ops::concat_rows(texts), config.loss_weights.tau);
    out.values.contrastive = contrast->value().item();
  }

  switch (config.stage) {
    case Stage::pretrain:
      out.total = *caption;
      break;
    case Stage::finetune:
      out.total = losses::finetune(*caption, *causal, *temporal, config.loss_weights);
      break;
    case Stage::contrastive:
      out.total = *contrast;
      break;
    case Stage::joint:
      out.total = ops::add(ops::add(*caption, losses::finetune(*caption, *causal, *temporal, config.loss_weights)),
                           *contrast);
      break;
  }
  out.values.total = out.total.value().item();
  return out;
}

Checkpoint initial_checkpoint(const ModelConfig& model, const Vocabulary& vocab, std::uint64_t seed) {
  if (vocab.size() != model.vocab_size) {
    throw ConfigError("model vocab_size " + std::to_string(model.vocab_size) + " differs from vocabulary size " +
                      std::to_string(vocab.size()));
  }
  Checkpoint c;
  c.model = model;
  c.params = init_parameters(model, seed);
  c.vocabulary = vocab.tokens();
  return c;
}

StageResult run_stage(const TrainConfig& config, const std::vector<VideoSample>& dataset, Checkpoint init,
                      const StageOptions& options) {
  config.validate();
  init.model.validate();
  check_dataset(dataset, init.model);

  const auto config_json = to_json(config);
  StageResult result;
  AdamState adam;
  int first_epoch = 0;
  auto& state = init.state;
  if (state.contains("stage") && state["stage"].at("config") == config_json && !state["stage"].at("finished").get<bool>()) {
    first_epoch = state["stage"].at("epochs_done").get<int>();
    adam.step = state["stage"].at("adam_step").get<std::uint64_t>();
    adam.first_moment = std::move(init.adam_first_moment);
    adam.second_moment = std::move(init.adam_second_moment);
    for (const auto& e : state["stage"].at("trace")) result.trace.push_back(epoch_log_from_json(e));
  }
  state["ablation"] = config.ablation.names();

  const PositionalTables tables(init.model);
  std::vector<std::size_t> order(dataset.size());
  const auto batch_size = static_cast<std::size_t>(config.batch_size);

  auto record_state = [&](int epochs_done) {
    init.adam_first_moment = adam.first_moment;
    init.adam_second_moment = adam.second_moment;
    nlohmann::json trace = nlohmann::json::array();
    for (const auto& e : result.trace) trace.push_back(to_json(e));
    state["stage"] = {{"config", config_json},
                      {"epochs_done", epochs_done},
                      {"adam_step", adam.step},
                      {"finished", epochs_done == config.epochs},
                      {"trace", trace}};
  };

  for (int epoch = first_epoch; epoch < config.epochs; ++epoch) {
    if (options.max_epochs && result.epochs_run >= *options.max_epochs) break;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(epoch_seed(config.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    LossBreakdown sum;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      const auto end = std::min(order.size(), begin + batch_size);
      std::vector<const VideoSample*> batch;
      for (std::size_t k = begin; k < end; ++k) batch.push_back(&dataset[order[k]]);

      Tape tape;
      const ParamVars vars(tape, init.params);
      const auto objective = batch_objective(batch, vars, init.model, tables, config);
      if (!std::isfinite(objective.values.total)) {
        throw TrainingError(to_string(config.stage) + " loss is not finite at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(n_batches) + ", step " + std::to_string(init.step + 1));
      }
      auto grads = tape.gradient(objective.total);
      if (config.grad_clip_norm) clip_gradients(grads, *config.grad_clip_norm);
      adam_step(init.params, grads, adam, config);
      ++init.step;

      sum.total += objective.values.total;
      accumulate(sum.caption, objective.values.caption);
      accumulate(sum.causal, objective.values.causal);
      accumulate(sum.temporal, objective.values.temporal);
      accumulate(sum.contrastive, objective.values.contrastive);
      ++n_batches;
    }
    const double n = static_cast<double>(n_batches);
    sum.total /= n;
    divide(sum.caption, n);
    divide(sum.causal, n);
    divide(sum.temporal, n);
    divide(sum.contrastive, n);
    result.trace.push_back({epoch, sum});
    ++result.epochs_run;

    record_state(epoch + 1);
    if (options.on_epoch_end) options.on_epoch_end(init);
  }
  if (!state.contains("stage") || state["stage"].at("config") != config_json) record_state(first_epoch);
  result.finished = state["stage"].at("finished").get<bool>();
  result.checkpoint = std::move(init);
  return result;
}

metrics::EvalCorpus reference_corpus(const std::vector<VideoSample>& dataset,
                                     const std::vector<std::vector<std::string>>* hypotheses) {
  if (hypotheses && hypotheses->size() != dataset.size())
    throw std::invalid_argument("reference_corpus: hypothesis count differs from dataset size");
  metrics::EvalCorpus corpus;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto ref = caption_words(dataset[i]);
    corpus.push_back({std::to_string(i), hypotheses ? (*hypotheses)[i] : ref, {ref}});
  }
  return corpus;
}

namespace {

bool follows_order(const std::vector<int>& mentions, const std::vector<int>& truth) {
  if (mentions.empty()) return false;
  std::size_t last = 0;
  bool first = true;
  for (int e : mentions) {
    const auto it = std::find(truth.begin(), truth.end(), e);
    if (e < 0 || it == truth.end()) return false;
    const auto pos = static_cast<std::size_t>(it - truth.begin());
    if (!first && pos <= last) return false;
    last = pos;
    first = false;
  }
  return true;
}

}  // namespace

Evaluation evaluate(const Checkpoint& checkpoint, const std::vector<VideoSample>& dataset, Decoding decoding,
                    const Vocabulary& dataset_vocab) {
  const auto vocab = vocabulary_of(checkpoint);
  if (!(vocab == dataset_vocab)) throw SchemaError("checkpoint vocabulary does not match the dataset vocabulary");
  check_dataset(dataset, checkpoint.model);
  Ablation ablation;
  if (auto it = checkpoint.state.find("ablation"); it != checkpoint.state.end())
    ablation = Ablation::from_names(it->get<std::vector<std::string>>());

  Evaluation out;
  std::size_t causal_samples = 0, causal_hits = 0, connective_matches = 0, ordered = 0;
  for (const auto& sample : dataset) {
    const auto memory = encode_frames(sample.frames, checkpoint.params, checkpoint.model, ablation.encoder());
    const auto hyp = decoding == Decoding::greedy ? greedy_decode(memory, checkpoint.params, checkpoint.model.decoder)
                                                  : beam_decode(memory, checkpoint.params, checkpoint.model.decoder);
    auto words = vocab.decode(hyp.tokens);
    const auto structure = parse_caption(words);
    const bool truth = has_nonchain_edge(sample);
    if (truth) {
      ++causal_samples;
      if (structure.has_causal_connective) ++causal_hits;
    }
    if (structure.has_causal_connective == truth) ++connective_matches;
    if (follows_order(structure.events, event_order(sample))) ++ordered;
    out.hypotheses.push_back(std::move(words));
  }
  const double n = static_cast<double>(dataset.size());
  out.causality_recall = causal_samples ? static_cast<double>(causal_hits) / static_cast<double>(causal_samples) : 0.0;
  out.causal_connective_accuracy = static_cast<double>(connective_matches) / n;
  out.temporal_consistency = static_cast<double>(ordered) / n;
  out.metrics = metrics::evaluate(reference_corpus(dataset, &out.hypotheses));
  return out;
}

nlohmann::json to_json(const Evaluation& eval, bool include_per_sample) {
  auto j = metrics::to_json(eval.metrics, include_per_sample);
  j["causality_recall"] = eval.causality_recall;
  j["causal_connective_accuracy"] = eval.causal_connective_accuracy;
  j["temporal_consistency"] = eval.temporal_consistency;
  if (include_per_sample) j["hypotheses"] = eval.hypotheses;
  return j;
}

void validate_stage_order(const std::vector<TrainConfig>& stages) {
  if (stages.empty()) throw ConfigError("pipeline has no stages");
  const bool has_joint = std::any_of(stages.begin(), stages.end(), [](const auto& s) { return s.stage == Stage::joint; });
  if (has_joint) {
    if (stages.size() != 1) throw ConfigError("a joint stage must be the only pipeline stage");
    return;
  }
  for (std::size_t i = 1; i < stages.size(); ++i) {
    if (static_cast<int>(stages[i].stage) <= static_cast<int>(stages[i - 1].stage)) {
      throw ConfigError("pipeline stage " + std::to_string(i) + " (" + to_string(stages[i].stage) + ") must come after " +
                        to_string(stages[i - 1].stage) + "; order is pretrain, finetune, contrastive");
    }
  }
}

PipelineResult run_pipeline(const std::vector<TrainConfig>& stages, const ModelConfig& model,
                            const std::vector<VideoSample>& train, const std::vector<VideoSample>& eval,
                            const PipelineOptions& options) {
  validate_stage_order(stages);
  for (const auto& s : stages) s.validate();
  nlohmann::json stage_configs = nlohmann::json::array();
  for (const auto& s : stages) stage_configs.push_back(to_json(s));

  std::optional<std::filesystem::path> latest;
  if (options.checkpoint_dir) {
    std::filesystem::create_directories(*options.checkpoint_dir);
    latest = *options.checkpoint_dir / "latest.ckpt";
  }

  Checkpoint current;
  if (latest && std::filesystem::exists(*latest)) {
    current = Checkpoint::load(*latest);
    const auto it = current.state.find("pipeline");
    if (it == current.state.end() || it->at("stages") != stage_configs || !(current.model == model))
      throw ConfigError(latest->string() + " belongs to a different pipeline configuration");
  } else {
    current = initial_checkpoint(model, caption_vocabulary(), stages.front().seed);
    current.state["pipeline"] = {{"stages", stage_configs}, {"completed", nlohmann::json::array()}};
  }

  auto save = [&](const Checkpoint& c) {
    if (latest) c.save(*latest);
  };

  std::optional<int> budget = options.max_epochs;
  while (true) {
    auto& completed = current.state["pipeline"]["completed"];
    // A stage that finished right before an interruption is folded in here.
    if (completed.size() < stages.size() && current.state.contains("stage") &&
        current.state["stage"].at("finished").get<bool>() &&
        current.state["stage"].at("config") == stage_configs[completed.size()]) {
      completed.push_back({{"config", current.state["stage"]["config"]}, {"trace", current.state["stage"]["trace"]}});
      current.state.erase("stage");
    }
    if (completed.size() == stages.size()) break;
    if (budget && *budget <= 0) {
      save(current);
      return {std::move(current), nlohmann::json::object(), false};
    }

    const auto& config = stages[completed.size()];
    auto result = run_stage(config, train, std::move(current), {budget, save});
    current = std::move(result.checkpoint);
    if (budget) *budget -= result.epochs_run;
  }

  nlohmann::json report{{"stages", current.state["pipeline"]["completed"]}, {"step", current.step}};
  if (eval.size() >= 2) {
    report["evaluation"] = to_json(evaluate(current, eval, options.decoding));
    report["decoding"] = to_string(options.decoding);
  }
  save(current);
  return {std::move(current), std::move(report), true};
}

}  // namespace ctrm
