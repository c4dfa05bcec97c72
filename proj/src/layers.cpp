#include "ctrm/layers.hpp"

#include <cmath>

namespace ctrm::layers {

std::string head_name(const std::string& prefix, std::size_t head, const char* role) {
  return prefix + ".head" + std::to_string(head) + "." + role;
}

void init_attention(ParameterSet& params, const std::string& prefix, std::size_t d_model, std::size_t n_heads,
                    Rng& rng) {
  const auto d_head = d_model / n_heads;
  for (std::size_t h = 0; h < n_heads; ++h) {
    params[head_name(prefix, h, "query")] = glorot_uniform(d_model, d_head, rng);
    params[head_name(prefix, h, "key")] = glorot_uniform(d_model, d_head, rng);
    params[head_name(prefix, h, "value")] = glorot_uniform(d_model, d_head, rng);
  }
  init_linear(params, prefix + ".out", d_model, d_model, rng);
}

AttentionOutput attention(Var queries, Var keys_values, const ParamVars& params, const std::string& prefix,
                          std::size_t n_heads, ops::Mask mask) {
  AttentionOutput result;
  std::vector<Var> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto wq = params[head_name(prefix, h, "query")];
    const auto q = ops::matmul(queries, wq);
    const auto k = ops::matmul(keys_values, params[head_name(prefix, h, "key")]);
    const auto v = ops::matmul(keys_values, params[head_name(prefix, h, "value")]);
    const double d_head = static_cast<double>(wq.value().cols());
    const auto scores = ops::scale(ops::matmul(q, ops::transpose(k)), 1.0 / std::sqrt(d_head));
    const auto weights = ops::row_softmax(scores, mask);
    result.weights.push_back(weights);
    heads.push_back(ops::matmul(weights, v));
  }
  result.output = linear(ops::concat_cols(heads), params, prefix + ".out");
  return result;
}

void init_linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  params[prefix + ".weight"] = glorot_uniform(in, out, rng);
  params[prefix + ".bias"] = Tensor({out}, 0.0);
}

Var linear(Var x, const ParamVars& params, const std::string& prefix) {
  return ops::add_row(ops::matmul(x, params[prefix + ".weight"]), params[prefix + ".bias"]);
}

void init_norm(ParameterSet& params, const std::string& prefix, std::size_t d_model) {
  params[prefix + ".gain"] = Tensor({d_model}, 1.0);
  params[prefix + ".bias"] = Tensor({d_model}, 0.0);
}

Var norm(Var x, const ParamVars& params, const std::string& prefix) {
  return ops::layer_norm(x, params[prefix + ".gain"], params[prefix + ".bias"]);
}

void init_feed_forward(ParameterSet& params, const std::string& prefix, std::size_t d_model, std::size_t hidden,
                       Rng& rng) {
  init_linear(params, prefix + ".in", d_model, hidden, rng);
  init_linear(params, prefix + ".out", hidden, d_model, rng);
}

Var feed_forward(Var x, const ParamVars& params, const std::string& prefix) {
  return linear(ops::relu(linear(x, params, prefix + ".in")), params, prefix + ".out");
}

}  // namespace ctrm::layers
