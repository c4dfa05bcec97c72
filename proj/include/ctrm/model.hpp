#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ctrm/dataset.hpp"
#include "ctrm/decoder.hpp"
#include "ctrm/encoder.hpp"
#include "ctrm/params.hpp"

namespace ctrm {

/// Full captioning model: encoder, decoder and the two alignment projections
/// used by the contrastive objective.
struct ModelConfig {
  CtrmConfig encoder;
  DecoderConfig decoder;
  std::size_t frame_dim = 16;
  std::size_t vocab_size = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Seeded Glorot-uniform weights, unit layer-norm gains, zero biases.
ParameterSet init_parameters(const ModelConfig& config, std::uint64_t seed);

/// Positional tables shared by every forward pass of one model.
struct PositionalTables {
  explicit PositionalTables(const ModelConfig& config)
      : frames(config.encoder.max_frames, config.encoder.d_model),
        tokens(config.decoder.max_caption_len, config.decoder.d_model) {}
  PositionalEncoding frames;
  PositionalEncoding tokens;
};

struct SampleGraph {
  EncoderVars encoder;
  /// Teacher-forced logits for caption[0..N-1), scoring caption[1..N).
  Var logits;
  std::vector<TokenId> targets;
};

SampleGraph forward_sample(const VideoSample& sample, const ParamVars& params, const ModelConfig& config,
                           const PositionalTables& tables, EncoderAblation ablation);

/// Mean-pooled temporal embeddings through the video alignment projection, [1 x d].
Var video_embedding(Var temporal, const ParamVars& params);
/// Mean-pooled caption word embeddings through the text alignment projection, [1 x d].
/// Reserved tokens are skipped unless the caption has nothing else.
Var text_embedding(std::span<const TokenId> caption, const ParamVars& params);

/// Value-level temporal embeddings of one clip.
Tensor encode_frames(const Tensor& frames, const ParameterSet& params, const ModelConfig& config,
                     EncoderAblation ablation = {});

}  // namespace ctrm
