#include "ctrm/params.hpp"

#include <cmath>
#include <stdexcept>

namespace ctrm {

ParamVars::ParamVars(Tape& tape, const ParameterSet& params) : tape_(&tape) {
  for (const auto& [name, value] : params) vars_.emplace(name, tape.parameter(name, value));
}

Var ParamVars::operator[](const std::string& name) const {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("missing parameter '" + name + "'");
  return it->second;
}

Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t({rows, cols});
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

const Tensor& require_param(const ParameterSet& params, const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) throw std::out_of_range("missing parameter '" + name + "'");
  return it->second;
}

double squared_norm(const ParameterSet& params) {
  double total = 0.0;
  for (const auto& [name, t] : params)
    for (double v : t.data()) total += v * v;
  return total;
}

}  // namespace ctrm
