#include "ctrm/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <type_traits>

#include "ctrm/errors.hpp"

namespace ctrm {
namespace {

// Reads fields from one JSON object and complains about any it did not consume.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned()) throw ConfigError(path(key) + " must be a non-negative integer");
    }
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.contains(key)) throw ConfigError("unknown config key " + path(key));
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void get_range(ObjectReader& r, const char* key, IntRange& out) {
  const json* v = r.sub(key);
  if (!v) return;
  if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number_integer() || !(*v)[1].is_number_integer())
    throw ConfigError(r.path(key) + " must be [min, max]");
  out = {(*v)[0].get<int>(), (*v)[1].get<int>()};
}

}  // namespace

json to_json(const CtrmConfig& c) {
  return {{"d_model", c.d_model},         {"n_heads", c.n_heads},
          {"n_trl_layers", c.n_trl_layers}, {"ffn_dim", c.ffn_dim},
          {"causal_mask_mode", to_string(c.causal_mask_mode)}, {"max_frames", c.max_frames}};
}

json to_json(const DecoderConfig& c) {
  return {{"d_model", c.d_model}, {"n_layers", c.n_layers},
          {"n_heads", c.n_heads}, {"ffn_dim", c.ffn_dim},
          {"max_caption_len", c.max_caption_len}, {"beam_width", c.beam_width}};
}

json to_json(const ModelConfig& c) {
  return {{"encoder", to_json(c.encoder)}, {"decoder", to_json(c.decoder)},
          {"frame_dim", c.frame_dim},     {"vocab_size", c.vocab_size}};
}

json to_json(const GeneratorConfig& c) {
  return {{"n_event_types", c.n_event_types},
          {"events_per_video", {c.events_per_video.min, c.events_per_video.max}},
          {"frames_per_event", {c.frames_per_event.min, c.frames_per_event.max}},
          {"d_v", c.d_v},
          {"feature_noise_sigma", c.feature_noise_sigma},
          {"causal_edge_prob", c.causal_edge_prob},
          {"seed", c.seed}};
}

json to_json(const LossWeights& w) { return {{"lambda1", w.lambda1}, {"lambda2", w.lambda2}, {"tau", w.tau}}; }

json to_json(const TrainConfig& c) {
  return {{"stage", to_string(c.stage)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"grad_clip_norm", c.grad_clip_norm ? json(*c.grad_clip_norm) : json(nullptr)},
          {"loss_weights", to_json(c.loss_weights)},
          {"ablation", c.ablation.names()},
          {"seed", c.seed}};
}

CtrmConfig ctrm_config_from_json(const json& j, const std::string& where) {
  ObjectReader r(j, where);
  CtrmConfig c;
  r.get("d_model", c.d_model);
  r.get("n_heads", c.n_heads);
  r.get("n_trl_layers", c.n_trl_layers);
  r.get("ffn_dim", c.ffn_dim);
  std::string mode = to_string(c.causal_mask_mode);
  r.get("causal_mask_mode", mode);
  c.causal_mask_mode = parse_causal_mask_mode(mode);
  r.get("max_frames", c.max_frames);
  r.finish();
  return c;
}

DecoderConfig decoder_config_from_json(const json& j, const std::string& where) {
  ObjectReader r(j, where);
  DecoderConfig c;
  r.get("d_model", c.d_model);
  r.get("n_layers", c.n_layers);
  r.get("n_heads", c.n_heads);
  r.get("ffn_dim", c.ffn_dim);
  r.get("max_caption_len", c.max_caption_len);
  r.get("beam_width", c.beam_width);
  r.finish();
  return c;
}

ModelConfig model_config_from_json(const json& j, const std::string& where) {
  ObjectReader r(j, where);
  ModelConfig c;
  if (const json* e = r.sub("encoder")) c.encoder = ctrm_config_from_json(*e, r.path("encoder"));
  if (const json* d = r.sub("decoder")) c.decoder = decoder_config_from_json(*d, r.path("decoder"));
  r.get("frame_dim", c.frame_dim);
  r.get("vocab_size", c.vocab_size);
  r.finish();
  return c;
}

GeneratorConfig generator_config_from_json(const json& j, const std::string& where) {
  ObjectReader r(j, where);
  GeneratorConfig c;
  r.get("n_event_types", c.n_event_types);
  get_range(r, "events_per_video", c.events_per_video);
  get_range(r, "frames_per_event", c.frames_per_event);
  r.get("d_v", c.d_v);
  r.get("feature_noise_sigma", c.feature_noise_sigma);
  r.get("causal_edge_prob", c.causal_edge_prob);
  r.get("seed", c.seed);
  r.finish();
  return c;
}

LossWeights loss_weights_from_json(const json& j, const std::string& where) {
  ObjectReader r(j, where);
  LossWeights w;
  r.get("lambda1", w.lambda1);
  r.get("lambda2", w.lambda2);
  r.get("tau", w.tau);
  r.finish();
  return w;
}

TrainConfig train_config_from_json(const json& j, const std::string& where, const TrainConfig& base) {
  ObjectReader r(j, where);
  TrainConfig c = base;
  std::string stage = to_string(c.stage);
  r.get("stage", stage);
  c.stage = parse_stage(stage);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("learning_rate", c.learning_rate);
  r.get("adam_beta1", c.adam_beta1);
  r.get("adam_beta2", c.adam_beta2);
  r.get("adam_eps", c.adam_eps);
  if (const json* clip = r.sub("grad_clip_norm")) {
    if (clip->is_null()) {
      c.grad_clip_norm.reset();
    } else if (clip->is_number()) {
      c.grad_clip_norm = clip->get<double>();
    } else {
      throw ConfigError(r.path("grad_clip_norm") + " must be a number or null");
    }
  }
  if (const json* w = r.sub("loss_weights")) c.loss_weights = loss_weights_from_json(*w, r.path("loss_weights"));
  std::vector<std::string> ablation = c.ablation.names();
  r.get("ablation", ablation);
  c.ablation = Ablation::from_names(ablation);
  r.get("seed", c.seed);
  r.finish();
  return c;
}

ModelConfig ExperimentConfig::model() const {
  ModelConfig m;
  m.encoder = encoder;
  m.decoder = decoder;
  m.frame_dim = data.generator.d_v;
  m.vocab_size = caption_vocabulary().size();
  return m;
}

void ExperimentConfig::validate() const {
  data.generator.validate();
  if (data.n_samples < 1) throw ConfigError("data.n_samples must be >= 1");
  if (data.holdout >= data.n_samples) throw ConfigError("data.holdout must be smaller than data.n_samples");
  model().validate();
  const auto longest_clip =
      static_cast<std::size_t>(data.generator.events_per_video.max * data.generator.frames_per_event.max);
  if (longest_clip > encoder.max_frames) {
    throw ConfigError("model.encoder.max_frames " + std::to_string(encoder.max_frames) + " is below the longest clip (" +
                      std::to_string(longest_clip) + " frames)");
  }
  // Each event adds at most two words, a connective and a three-word "because" clause.
  const auto longest_caption = static_cast<std::size_t>(6 * data.generator.events_per_video.max);
  if (longest_caption > decoder.max_caption_len) {
    throw ConfigError("model.decoder.max_caption_len " + std::to_string(decoder.max_caption_len) +
                      " is below the longest caption (" + std::to_string(longest_caption) + " decoder positions)");
  }
  train.validate();
  for (const auto& stage : pipeline) stage.validate();
  validate_stage_order(pipeline);
}

json to_json(const ExperimentConfig& c) {
  json data = to_json(c.data.generator);
  data["n_samples"] = c.data.n_samples;
  data["holdout"] = c.data.holdout;
  json pipeline = json::array();
  for (const auto& stage : c.pipeline) pipeline.push_back(to_json(stage));
  return {{"data", data},
          {"model", {{"encoder", to_json(c.encoder)}, {"decoder", to_json(c.decoder)}}},
          {"train", to_json(c.train)},
          {"pipeline", pipeline},
          {"decoding", to_string(c.decoding)}};
}

ExperimentConfig experiment_from_json(const json& j) {
  ObjectReader r(j, "");
  ExperimentConfig c;
  if (const json* d = r.sub("data")) {
    json generator = *d;
    if (generator.is_object()) {
      for (const char* key : {"n_samples", "holdout"}) {
        if (auto it = generator.find(key); it != generator.end()) {
          if (!it->is_number_unsigned()) throw ConfigError(std::string("data.") + key + " must be a non-negative integer");
          (key == std::string("n_samples") ? c.data.n_samples : c.data.holdout) = it->get<std::size_t>();
          generator.erase(it);
        }
      }
    }
    c.data.generator = generator_config_from_json(generator, "data");
  }
  if (const json* m = r.sub("model")) {
    ObjectReader mr(*m, "model");
    if (const json* e = mr.sub("encoder")) c.encoder = ctrm_config_from_json(*e, "model.encoder");
    if (const json* dd = mr.sub("decoder")) c.decoder = decoder_config_from_json(*dd, "model.decoder");
    mr.finish();
  }
  if (const json* t = r.sub("train")) c.train = train_config_from_json(*t, "train");
  if (const json* p = r.sub("pipeline")) {
    if (!p->is_array()) throw ConfigError("pipeline must be an array of stage objects");
    for (std::size_t i = 0; i < p->size(); ++i)
      c.pipeline.push_back(train_config_from_json((*p)[i], "pipeline." + std::to_string(i), c.train));
  } else {
    for (Stage stage : {Stage::pretrain, Stage::finetune, Stage::contrastive}) {
      TrainConfig s = c.train;
      s.stage = stage;
      c.pipeline.push_back(s);
    }
  }
  std::string decoding = to_string(c.decoding);
  r.get("decoding", decoding);
  try {
    c.decoding = parse_decoding(decoding);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("decoding: ") + e.what());
  }
  r.finish();
  return c;
}

void apply_overrides(json& doc, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq);
    const std::string text = item.substr(eq + 1);

    json* node = &doc;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (node->is_object() && node->contains(part)) {
        node = &(*node)[part];
      } else if (node->is_array() && !part.empty() && part.find_first_not_of("0123456789") == std::string::npos &&
                 std::stoul(part) < node->size()) {
        node = &(*node)[std::stoul(part)];
      } else {
        throw ConfigError("override names unknown config key " + key);
      }
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    json value = json::parse(text, nullptr, false);
    *node = value.is_discarded() ? json(text) : value;
  }
}

ExperimentConfig load_experiment(const std::filesystem::path* path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw std::runtime_error("cannot open config " + path->string());
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + path->string() + ": " + e.what());
    }
  }
  json resolved = to_json(experiment_from_json(doc));
  apply_overrides(resolved, overrides);
  // Without an explicit pipeline the stages follow the (overridden) train section.
  const bool pipeline_overridden = std::any_of(overrides.begin(), overrides.end(),
                                               [](const std::string& o) { return o.rfind("pipeline", 0) == 0; });
  if (!doc.contains("pipeline") && !pipeline_overridden) resolved.erase("pipeline");
  ExperimentConfig config = experiment_from_json(resolved);
  config.validate();
  return config;
}

}  // namespace ctrm
