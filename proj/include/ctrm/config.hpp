#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrm/dataset.hpp"
#include "ctrm/model.hpp"
#include "ctrm/training.hpp"

namespace ctrm {

using nlohmann::json;

// JSON mappings. Readers reject unknown keys with ConfigError; missing keys keep defaults.
json to_json(const CtrmConfig& c);
json to_json(const DecoderConfig& c);
json to_json(const ModelConfig& c);
json to_json(const GeneratorConfig& c);
json to_json(const LossWeights& w);
json to_json(const TrainConfig& c);

CtrmConfig ctrm_config_from_json(const json& j, const std::string& where = "model.encoder");
DecoderConfig decoder_config_from_json(const json& j, const std::string& where = "model.decoder");
ModelConfig model_config_from_json(const json& j, const std::string& where = "model");
GeneratorConfig generator_config_from_json(const json& j, const std::string& where = "data");
LossWeights loss_weights_from_json(const json& j, const std::string& where = "loss_weights");
TrainConfig train_config_from_json(const json& j, const std::string& where = "train",
                                   const TrainConfig& base = {});

struct DataConfig {
  GeneratorConfig generator;
  std::size_t n_samples = 64;
  /// Trailing samples kept out of training and used for evaluation.
  std::size_t holdout = 0;
};

/// Everything a CLI run needs:
///   data      generator fields plus n_samples and holdout
///   model     {encoder, decoder}; frame width and vocabulary follow from data
///   train     stage settings for `train`, and defaults for pipeline entries
///   pipeline  ordered stage list; each entry overrides fields of `train`
///   decoding  "greedy" or "beam"
struct ExperimentConfig {
  DataConfig data;
  CtrmConfig encoder;
  DecoderConfig decoder;
  TrainConfig train;
  std::vector<TrainConfig> pipeline;
  Decoding decoding = Decoding::greedy;

  ModelConfig model() const;
  void validate() const;
};

json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const json& j);

/// Applies `key=value` overrides to a config document. Keys are dotted paths
/// (array entries by index) that must already exist in `doc`; values are parsed
/// as JSON, falling back to a plain string.
void apply_overrides(json& doc, const std::vector<std::string>& overrides);

/// Defaults, then the optional file, then overrides.
ExperimentConfig load_experiment(const std::filesystem::path* path, const std::vector<std::string>& overrides);

}  // namespace ctrm
