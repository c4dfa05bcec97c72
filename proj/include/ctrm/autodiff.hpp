#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctrm/tensor.hpp"

namespace ctrm {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Per-node gradient accumulators for one backward pass. Slots are created
/// zero-filled on first touch so untouched branches cost nothing.
class GradientBuffer {
 public:
  explicit GradientBuffer(std::size_t nodes) : grads_(nodes) {}

  /// Accumulator for `v`, zero-initialised with v's shape on first access.
  Tensor& at(Var v);
  void add(Var v, const Tensor& g);

  const std::optional<Tensor>& get(std::size_t id) const { return grads_[id]; }

 private:
  std::vector<std::optional<Tensor>> grads_;
};

/// Define-by-run computation record.
///
/// Every primitive appends one entry holding its output value, the ids of its
/// inputs and a closure that pushes the output gradient back to those inputs.
/// Inputs always precede their consumers, so a reverse sweep over the entries
/// is a valid topological order. Backward passes never mutate the tape, so
/// calling `gradient` repeatedly on the same loss returns identical results.
class Tape {
 public:
  using Backward =
      std::function<void(const Tensor& out_value, const Tensor& grad_out, GradientBuffer& grads)>;

  struct Entry {
    std::string op;
    std::vector<std::size_t> inputs;
    std::size_t output;
  };

  /// With `record_gradients == false` closures are dropped and `gradient` throws.
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(std::string name, Tensor value);
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, Backward backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return recording_; }
  std::vector<Entry> entries() const;

  /// Drops every entry recorded after the first `size`; parameters must survive.
  void truncate(std::size_t size);

  /// Reverse sweep from a one-element `loss`; returns the raw per-node buffer.
  GradientBuffer backward(Var loss) const;

  /// d(loss)/d(p) for every named parameter. Parameters the loss does not
  /// depend on receive zero tensors.
  std::map<std::string, Tensor> gradient(Var loss) const;

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    Backward backward;
    std::string name;
  };

  std::deque<Node> nodes_;
  std::map<std::string, std::size_t> parameters_;
  bool recording_;
};

}  // namespace ctrm
