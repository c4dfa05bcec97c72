#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "ctrm/autodiff.hpp"
#include "ctrm/tensor.hpp"

namespace ctrm {

using Rng = std::mt19937_64;

/// Named trainable tensors, ordered by name.
using ParameterSet = std::map<std::string, Tensor>;

/// Tape handles for a ParameterSet, created by `bind`.
class ParamVars {
 public:
  ParamVars() = default;
  ParamVars(Tape& tape, const ParameterSet& params);

  Var operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.contains(name); }
  Tape& tape() const { return *tape_; }

 private:
  Tape* tape_ = nullptr;
  std::map<std::string, Var> vars_;
};

/// Uniform in +-sqrt(6 / (rows + cols)).
Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);

/// Looks up `name`, throwing std::out_of_range with the name when absent.
const Tensor& require_param(const ParameterSet& params, const std::string& name);

/// Sum of squared elements over every tensor.
double squared_norm(const ParameterSet& params);

}  // namespace ctrm
