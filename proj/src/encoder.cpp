#include "ctrm/encoder.hpp"

#include <cmath>

#include "ctrm/layers.hpp"

namespace ctrm {

std::string to_string(CausalMaskMode mode) {
  return mode == CausalMaskMode::lower_triangular ? "lower_triangular" : "unmasked";
}

CausalMaskMode parse_causal_mask_mode(const std::string& text) {
  if (text == "lower_triangular") return CausalMaskMode::lower_triangular;
  if (text == "unmasked") return CausalMaskMode::unmasked;
  throw ConfigError("causal_mask_mode must be 'lower_triangular' or 'unmasked', got '" + text + "'");
}

void CtrmConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || ffn_dim == 0 || max_frames == 0) {
    throw ConfigError("ctrm: d_model, n_heads, ffn_dim and max_frames must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("ctrm: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  }
}

PositionalEncoding::PositionalEncoding(std::size_t max_positions, std::size_t d_model)
    : table_({max_positions, d_model}) {
  for (std::size_t t = 0; t < max_positions; ++t) {
    for (std::size_t c = 0; c < d_model; ++c) {
      const auto pair = static_cast<double>(c - c % 2);
      const double angle = static_cast<double>(t) / std::pow(10000.0, pair / static_cast<double>(d_model));
      table_(t, c) = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
}

Tensor PositionalEncoding::first(std::size_t count) const {
  if (count > table_.rows()) {
    throw CapacityError(std::to_string(count) + " positions exceed the table of " + std::to_string(table_.rows()));
  }
  return table_.slice_rows(0, count);
}

namespace {

std::string trl_layer(std::size_t l) { return "trl.layer" + std::to_string(l); }

void check_frames(const Tensor& frames, const CtrmConfig& config) {
  require_matrix(frames, "frames");
  if (frames.rows() > config.max_frames) {
    throw CapacityError(std::to_string(frames.rows()) + " frames exceed max_frames " +
                        std::to_string(config.max_frames));
  }
}

}  // namespace

void init_encoder(ParameterSet& params, const CtrmConfig& config, std::size_t frame_dim, Rng& rng) {
  config.validate();
  layers::init_linear(params, "cde.input", frame_dim, config.d_model, rng);
  layers::init_attention(params, "cde.attn", config.d_model, config.n_heads, rng);
  for (std::size_t l = 0; l < config.n_trl_layers; ++l) {
    const auto p = trl_layer(l);
    layers::init_norm(params, p + ".norm1", config.d_model);
    layers::init_attention(params, p + ".attn", config.d_model, config.n_heads, rng);
    layers::init_norm(params, p + ".norm2", config.d_model);
    layers::init_feed_forward(params, p + ".ffn", config.d_model, config.ffn_dim, rng);
  }
  if (config.n_trl_layers > 0) layers::init_norm(params, "trl.final_norm", config.d_model);
}

void causal_dynamics(Var frames, const ParamVars& params, const CtrmConfig& config, EncoderVars& out) {
  check_frames(frames.value(), config);
  out.projected = layers::linear(frames, params, "cde.input");
  const auto mask =
      config.causal_mask_mode == CausalMaskMode::lower_triangular ? ops::Mask::lower_triangular : ops::Mask::none;
  auto attn = layers::attention(out.projected, out.projected, params, "cde.attn", config.n_heads, mask);
  out.causal = attn.output;
  out.attention = std::move(attn.weights);
}

Var temporal_relations(Var causal, const ParamVars& params, const CtrmConfig& config, const PositionalEncoding& pe) {
  auto& tape = params.tape();
  auto x = ops::add(causal, tape.constant(pe.first(causal.value().rows())));
  for (std::size_t l = 0; l < config.n_trl_layers; ++l) {
    const auto p = trl_layer(l);
    const auto h = layers::norm(x, params, p + ".norm1");
    x = ops::add(x, layers::attention(h, h, params, p + ".attn", config.n_heads, ops::Mask::none).output);
    x = ops::add(x, layers::feed_forward(layers::norm(x, params, p + ".norm2"), params, p + ".ffn"));
  }
  if (config.n_trl_layers > 0) x = layers::norm(x, params, "trl.final_norm");
  return x;
}

EncoderVars encode(Var frames, const ParamVars& params, const CtrmConfig& config, const PositionalEncoding& pe,
                   EncoderAblation ablation) {
  EncoderVars out;
  if (ablation.disable_cde) {
    check_frames(frames.value(), config);
    out.projected = layers::linear(frames, params, "cde.input");
    out.causal = out.projected;
  } else {
    causal_dynamics(frames, params, config, out);
  }
  if (ablation.disable_trl) {
    out.temporal = ops::add(out.causal, params.tape().constant(pe.first(frames.value().rows())));
  } else {
    out.temporal = temporal_relations(out.causal, params, config, pe);
  }
  return out;
}

CdeOutput cde_forward(const Tensor& frames, const ParameterSet& params, const CtrmConfig& config) {
  config.validate();
  Tape tape(false);
  const ParamVars vars(tape, params);
  EncoderVars enc;
  causal_dynamics(tape.constant(frames), vars, config, enc);
  const auto t = frames.rows();
  std::vector<double> stacked;
  stacked.reserve(config.n_heads * t * t);
  for (const auto& a : enc.attention) stacked.insert(stacked.end(), a.value().data().begin(), a.value().data().end());
  return CdeOutput{Tensor({config.n_heads, t, t}, std::move(stacked)), enc.causal.value()};
}

Tensor trl_forward(const CdeOutput& cde, const ParameterSet& params, const CtrmConfig& config) {
  config.validate();
  Tape tape(false);
  const ParamVars vars(tape, params);
  const PositionalEncoding pe(config.max_frames, config.d_model);
  return temporal_relations(tape.constant(cde.embeddings), vars, config, pe).value();
}

}  // namespace ctrm
