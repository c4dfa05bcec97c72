#include "ctrm/losses.hpp"

#include <numeric>

#include "ctrm/encoder.hpp"
#include "ctrm/ops.hpp"

namespace ctrm {

void LossWeights::validate() const {
  if (!(tau > 0.0)) throw ConfigError("loss_weights.tau must be positive");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("loss_weights.lambda1/lambda2 must be non-negative");
}

CausalAnnotation CausalAnnotation::from_edges(std::size_t frames,
                                              std::span<const std::pair<std::size_t, std::size_t>> edges) {
  CausalAnnotation a{Tensor({frames, frames}, 0.0)};
  for (const auto& [cause, effect] : edges) {
    if (cause >= frames || effect >= frames) {
      throw std::out_of_range("causal edge (" + std::to_string(cause) + ", " + std::to_string(effect) +
                              ") outside " + std::to_string(frames) + " frames");
    }
    a.adjacency(effect, cause) = 1.0;
  }
  a.validate();
  return a;
}

bool CausalAnnotation::row_annotated(std::size_t i) const {
  for (double v : adjacency.row(i))
    if (v != 0.0) return true;
  return false;
}

void CausalAnnotation::validate() const {
  require_matrix(adjacency, "causal annotation");
  if (adjacency.rows() != adjacency.cols()) throw ShapeError("causal annotation must be square");
  for (std::size_t i = 0; i < adjacency.rows(); ++i) {
    if (adjacency(i, i) != 0.0) throw std::invalid_argument("causal annotation has a self edge at frame " + std::to_string(i));
    for (double v : adjacency.row(i))
      if (v != 0.0 && v != 1.0) throw std::invalid_argument("causal annotation entries must be 0 or 1");
  }
}

namespace losses {

Var caption_cross_entropy(Var logits, std::span<const TokenId> targets) {
  if (targets.empty()) throw std::invalid_argument("caption_cross_entropy: empty target sequence");
  return ops::cross_entropy(logits, targets, kPad);
}

double caption_cross_entropy(const Tensor& logits, std::span<const TokenId> targets) {
  Tape tape(false);
  return caption_cross_entropy(tape.constant(logits), targets).value().item();
}

Var causal_alignment(std::span<const Var> attention, const CausalAnnotation& annotation) {
  if (attention.empty()) throw std::invalid_argument("causal_alignment: no attention heads");
  std::vector<Var> per_head;
  per_head.reserve(attention.size());
  for (const auto& a : attention) per_head.push_back(ops::kl_rows(annotation.adjacency, a));
  return ops::scale(ops::add_all(per_head), 1.0 / static_cast<double>(attention.size()));
}

double causal_alignment(const Tensor& attention, const CausalAnnotation& annotation) {
  if (attention.rank() != 3 || attention.shape()[1] != annotation.frames() ||
      attention.shape()[2] != annotation.frames()) {
    throw ShapeError("causal_alignment: attention " + to_string(attention.shape()) + " vs annotation " +
                     to_string(annotation.adjacency.shape()));
  }
  Tape tape(false);
  const auto t = annotation.frames();
  std::vector<Var> heads;
  for (std::size_t h = 0; h < attention.shape()[0]; ++h) {
    const auto begin = attention.data().begin() + static_cast<std::ptrdiff_t>(h * t * t);
    heads.push_back(tape.constant(Tensor({t, t}, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(t * t)))));
  }
  return causal_alignment(heads, annotation).value().item();
}

Var temporal_consistency(Var temporal) {
  const auto& h = temporal.value();
  require_matrix(h, "temporal_consistency");
  if (h.rows() < 2) return temporal.tape->constant(Tensor::scalar(0.0));
  const auto diff = ops::consecutive_diff(temporal);
  const double denom = static_cast<double>(h.rows() - 1) * static_cast<double>(h.cols());
  return ops::scale(ops::sum(ops::mul(diff, diff)), 1.0 / denom);
}

double temporal_consistency(const Tensor& temporal) {
  Tape tape(false);
  return temporal_consistency(tape.constant(temporal)).value().item();
}

Var contrastive(Var video, Var text, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive: tau must be positive");
  const auto& v = video.value();
  const auto& t = text.value();
  require_matrix(v, "contrastive video");
  if (v.shape() != t.shape()) {
    throw ShapeError("contrastive: video " + to_string(v.shape()) + " vs text " + to_string(t.shape()));
  }
  const auto sims = ops::matmul(ops::row_l2_normalize(video), ops::transpose(ops::row_l2_normalize(text)));
  std::vector<std::size_t> matches(v.rows());
  std::iota(matches.begin(), matches.end(), std::size_t{0});
  return ops::cross_entropy(ops::scale(sims, 1.0 / tau), matches);
}

double contrastive(const Tensor& video, const Tensor& text, const LossWeights& weights) {
  weights.validate();
  Tape tape(false);
  return contrastive(tape.constant(video), tape.constant(text), weights.tau).value().item();
}

Var finetune(Var caption, Var causal, Var temporal, const LossWeights& weights) {
  return ops::add(ops::add(caption, ops::scale(causal, weights.lambda1)), ops::scale(temporal, weights.lambda2));
}

double finetune(double caption, double causal, double temporal, const LossWeights& weights) {
  return caption + weights.lambda1 * causal + weights.lambda2 * temporal;
}

}  // namespace losses
}  // namespace ctrm
