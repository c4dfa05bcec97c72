#include "ctrm/autodiff.hpp"

#include <stdexcept>

namespace ctrm {

const Tensor& Var::value() const {
  if (tape == nullptr) throw std::logic_error("Var is not bound to a tape");
  return tape->value(*this);
}

Tensor& GradientBuffer::at(Var v) {
  auto& slot = grads_[v.id];
  if (!slot) slot.emplace(v.shape(), 0.0);
  return *slot;
}

void GradientBuffer::add(Var v, const Tensor& g) {
  auto& acc = at(v);
  if (acc.size() != g.size()) {
    throw ShapeError("gradient of shape " + to_string(g.shape()) + " for value of shape " + to_string(acc.shape()));
  }
  auto dst = acc.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{"constant", std::move(value), {}, {}, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(std::string name, Tensor value) {
  if (parameters_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  nodes_.push_back(Node{"parameter", std::move(value), {}, {}, name});
  const auto id = nodes_.size() - 1;
  parameters_.emplace(std::move(name), id);
  return Var{this, id};
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, Backward backward) {
  Node node{std::string(op), std::move(value), {}, {}, {}};
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tape != this) throw std::logic_error(std::string(op) + ": input belongs to a different tape");
    node.inputs.push_back(in.id);
  }
  if (recording_) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

std::vector<Tape::Entry> Tape::entries() const {
  std::vector<Entry> out;
  out.reserve(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) out.push_back({nodes_[i].op, nodes_[i].inputs, i});
  return out;
}

void Tape::truncate(std::size_t size) {
  while (nodes_.size() > size) {
    if (!nodes_.back().name.empty()) throw std::logic_error("truncate would drop parameter '" + nodes_.back().name + "'");
    nodes_.pop_back();
  }
}

GradientBuffer Tape::backward(Var loss) const {
  if (!recording_) throw std::logic_error("gradient requested from a tape that does not record");
  if (loss.tape != this) throw std::logic_error("loss belongs to a different tape");
  if (value(loss).size() != 1) {
    throw std::invalid_argument("gradient requires a scalar loss, got shape " + to_string(value(loss).shape()));
  }
  GradientBuffer grads(nodes_.size());
  grads.at(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const auto& node = nodes_[i];
    const auto& g = grads.get(i);
    if (!g || !node.backward) continue;
    node.backward(node.value, *g, grads);
  }
  return grads;
}

std::map<std::string, Tensor> Tape::gradient(Var loss) const {
  const auto grads = backward(loss);
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : parameters_) {
    const auto& g = grads.get(id);
    out.emplace(name, g ? *g : Tensor(nodes_[id].value.shape(), 0.0));
  }
  return out;
}

}  // namespace ctrm
