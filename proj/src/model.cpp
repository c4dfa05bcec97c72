#include "ctrm/model.hpp"

namespace ctrm {

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (encoder.d_model != decoder.d_model) {
    throw ConfigError("model: encoder d_model " + std::to_string(encoder.d_model) + " differs from decoder d_model " +
                      std::to_string(decoder.d_model));
  }
  if (frame_dim == 0) throw ConfigError("model: frame_dim must be positive");
  if (vocab_size <= kUnk) throw ConfigError("model: vocabulary must extend past the reserved tokens");
  if (decoder.max_caption_len < 2) throw ConfigError("model: max_caption_len must be at least 2");
}

ParameterSet init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ParameterSet params;
  init_encoder(params, config.encoder, config.frame_dim, rng);
  init_decoder(params, config.decoder, config.vocab_size, rng);
  const auto d = config.encoder.d_model;
  params["align.video.weight"] = glorot_uniform(d, d, rng);
  params["align.text.weight"] = glorot_uniform(d, d, rng);
  return params;
}

SampleGraph forward_sample(const VideoSample& sample, const ParamVars& params, const ModelConfig& config,
                           const PositionalTables& tables, EncoderAblation ablation) {
  if (sample.caption.size() < 2) throw std::invalid_argument("caption must hold at least <bos> and <eos>");
  SampleGraph g;
  g.encoder = encode(params.tape().constant(sample.frames), params, config.encoder, tables.frames, ablation);
  const std::span<const TokenId> caption(sample.caption);
  g.logits = decoder_logits(caption.first(caption.size() - 1), g.encoder.temporal, params, config.decoder, tables.tokens);
  g.targets.assign(caption.begin() + 1, caption.end());
  return g;
}

Var video_embedding(Var temporal, const ParamVars& params) {
  return ops::matmul(ops::mean_rows(temporal), params["align.video.weight"]);
}

Var text_embedding(std::span<const TokenId> caption, const ParamVars& params) {
  std::vector<std::size_t> words;
  for (auto id : caption)
    if (id > kUnk) words.push_back(id);
  if (words.empty()) words.assign(caption.begin(), caption.end());
  const auto pooled = ops::mean_rows(ops::embedding(params["decoder.token_embedding"], words));
  return ops::matmul(pooled, params["align.text.weight"]);
}

Tensor encode_frames(const Tensor& frames, const ParameterSet& params, const ModelConfig& config,
                     EncoderAblation ablation) {
  Tape tape(false);
  const ParamVars vars(tape, params);
  const PositionalEncoding pe(config.encoder.max_frames, config.encoder.d_model);
  return encode(tape.constant(frames), vars, config.encoder, pe, ablation).temporal.value();
}

}  // namespace ctrm
