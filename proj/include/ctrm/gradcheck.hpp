#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ctrm/autodiff.hpp"
#include "ctrm/params.hpp"

namespace ctrm::gradcheck {

/// One randomly drawn problem: named inputs and a scalar loss over them.
struct Instance {
  ParameterSet inputs;
  std::function<Var(const ParamVars&)> loss;
};

struct Case {
  std::string name;
  /// Single tape primitive, as opposed to a composed block or objective.
  bool primitive = true;
  std::function<Instance(Rng&)> make;
  /// Coordinates probed per input tensor; 0 probes every coordinate.
  std::size_t max_coords = 0;
};

/// Every differentiable primitive, the encoder and decoder blocks, and the
/// pretrain / finetune / contrastive / joint objectives of a micro model.
const std::vector<Case>& registry();

/// Names of the primitives in ops.hpp that the registry must cover.
std::vector<std::string> primitive_names();

struct Options {
  int seeds = 20;
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Only run cases whose name is listed; empty runs all.
  std::vector<std::string> only;
  /// Test hook: perturbs the analytic gradient of the named case.
  std::string corrupt_case;
};

struct CaseResult {
  std::string name;
  bool primitive = true;
  /// max over seeds and coordinates of |analytic - numeric| / max(1, |numeric|)
  double worst_error = 0.0;
  std::string worst_input;
  std::size_t coordinates = 0;
  std::size_t kinks_skipped = 0;
  bool passed = false;
};

struct Report {
  std::vector<CaseResult> cases;
  bool passed = false;
  double seconds = 0.0;
};

/// Central-difference check of one instance; returns the worst relative error.
/// Probes that flip the sign of any relu input are skipped and counted in `kinks`.
double check_instance(const Instance& instance, double step, std::size_t max_coords, Rng& coord_rng,
                      std::string* worst_input = nullptr, std::size_t* coordinates = nullptr,
                      bool corrupt = false, std::size_t* kinks = nullptr);

Report run(const Options& options = {});

}  // namespace ctrm::gradcheck
