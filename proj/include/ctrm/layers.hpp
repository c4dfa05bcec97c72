#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ctrm/ops.hpp"
#include "ctrm/params.hpp"

// Transformer building blocks shared by the encoder and the caption decoder.
// Each block owns a name prefix inside the ParameterSet.
namespace ctrm::layers {

struct AttentionOutput {
  Var output;
  /// One [queries x keys] probability matrix per head.
  std::vector<Var> weights;
};

/// Per-head query/key/value projections [d_model x d_model/n_heads] plus an
/// output projection and bias.
void init_attention(ParameterSet& params, const std::string& prefix, std::size_t d_model, std::size_t n_heads,
                    Rng& rng);

/// Scaled dot-product attention, scores divided by sqrt(d_model / n_heads).
AttentionOutput attention(Var queries, Var keys_values, const ParamVars& params, const std::string& prefix,
                          std::size_t n_heads, ops::Mask mask);

void init_linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);
Var linear(Var x, const ParamVars& params, const std::string& prefix);

void init_norm(ParameterSet& params, const std::string& prefix, std::size_t d_model);
Var norm(Var x, const ParamVars& params, const std::string& prefix);

/// relu(x W1 + b1) W2 + b2
void init_feed_forward(ParameterSet& params, const std::string& prefix, std::size_t d_model, std::size_t hidden,
                       Rng& rng);
Var feed_forward(Var x, const ParamVars& params, const std::string& prefix);

std::string head_name(const std::string& prefix, std::size_t head, const char* role);

}  // namespace ctrm::layers
