#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ctrm/errors.hpp"
#include "ctrm/ops.hpp"
#include "ctrm/params.hpp"

namespace ctrm {

enum class CausalMaskMode { lower_triangular, unmasked };

std::string to_string(CausalMaskMode mode);
CausalMaskMode parse_causal_mask_mode(const std::string& text);

/// Width and depth of the causal-temporal encoder. A single width is used for
/// attention keys, the causal embeddings and the temporal embeddings.
struct CtrmConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_trl_layers = 2;
  std::size_t ffn_dim = 64;
  CausalMaskMode causal_mask_mode = CausalMaskMode::lower_triangular;
  std::size_t max_frames = 16;

  void validate() const;
  friend bool operator==(const CtrmConfig&, const CtrmConfig&) = default;
};

/// Which encoder stages run. Disabling both leaves projected frames plus
/// positional encodings.
struct EncoderAblation {
  bool disable_cde = false;
  bool disable_trl = false;
};

/// Fixed sinusoidal table: column 2i holds sin(t / 10000^(2i/d)), column 2i+1
/// the matching cosine.
class PositionalEncoding {
 public:
  PositionalEncoding(std::size_t max_positions, std::size_t d_model);

  const Tensor& table() const { return table_; }
  /// Rows [0, count).
  Tensor first(std::size_t count) const;

 private:
  Tensor table_;
};

struct CdeOutput {
  /// [n_heads x T x T], one causal attention matrix per head.
  Tensor attention;
  /// [T x d_model]
  Tensor embeddings;
};

/// Tape-level encoder results.
struct EncoderVars {
  /// Projected frames [T x d_model].
  Var projected;
  /// Causal embeddings; equals `projected` when the CDE is disabled.
  Var causal;
  /// Per-head attention matrices; empty when the CDE is disabled.
  std::vector<Var> attention;
  /// Temporal embeddings fed to the decoder.
  Var temporal;
};

/// Adds encoder parameters for frames of width `frame_dim`.
void init_encoder(ParameterSet& params, const CtrmConfig& config, std::size_t frame_dim, Rng& rng);

/// Projects frames and applies multi-head (optionally masked) self-attention.
/// Writes `projected`, `causal` and `attention` of `out`.
void causal_dynamics(Var frames, const ParamVars& params, const CtrmConfig& config, EncoderVars& out);

/// Adds positional rows to `causal` and runs the pre-norm encoder stack.
Var temporal_relations(Var causal, const ParamVars& params, const CtrmConfig& config, const PositionalEncoding& pe);

/// Full encoder with ablation switches.
EncoderVars encode(Var frames, const ParamVars& params, const CtrmConfig& config, const PositionalEncoding& pe,
                   EncoderAblation ablation = {});

/// Value-level causal dynamics encoder.
CdeOutput cde_forward(const Tensor& frames, const ParameterSet& params, const CtrmConfig& config);

/// Value-level temporal relational learner over a CDE result.
Tensor trl_forward(const CdeOutput& cde, const ParameterSet& params, const CtrmConfig& config);

}  // namespace ctrm
