#pragma once

#include <span>
#include <vector>

#include "ctrm/autodiff.hpp"
#include "ctrm/tensor.hpp"
#include "ctrm/vocabulary.hpp"

namespace ctrm {

/// Weights of the auxiliary fine-tuning terms and the contrastive temperature.
struct LossWeights {
  double lambda1 = 0.5;  ///< causal alignment
  double lambda2 = 0.5;  ///< temporal consistency
  double tau = 0.07;

  void validate() const;
};

/// Frame-level causal annotation. Row i marks the frames that cause frame i,
/// so rows line up with rows of a causal attention matrix.
struct CausalAnnotation {
  Tensor adjacency;

  /// Builds the [T x T] matrix from (cause_frame, effect_frame) pairs.
  static CausalAnnotation from_edges(std::size_t frames, std::span<const std::pair<std::size_t, std::size_t>> edges);

  std::size_t frames() const { return adjacency.rows(); }
  /// Whether row i has at least one annotated cause.
  bool row_annotated(std::size_t i) const;
  void validate() const;
};

namespace losses {

/// Mean over non-pad positions of -log p(target). Logits row i scores targets[i].
Var caption_cross_entropy(Var logits, std::span<const TokenId> targets);
double caption_cross_entropy(const Tensor& logits, std::span<const TokenId> targets);

/// Mean over heads of the mean KL(normalised annotation row || attention row)
/// over annotated rows. Zero when nothing is annotated.
Var causal_alignment(std::span<const Var> attention, const CausalAnnotation& annotation);
/// `attention` is [n_heads x T x T].
double causal_alignment(const Tensor& attention, const CausalAnnotation& annotation);

/// (1/(T-1)) sum_t ||h_{t+1} - h_t||^2 / d; zero for a single row.
Var temporal_consistency(Var temporal);
double temporal_consistency(const Tensor& temporal);

/// Video-to-text InfoNCE with cosine similarity and in-batch negatives,
/// averaged over the batch. Rows of `video` and `text` are paired by index.
Var contrastive(Var video, Var text, double tau);
double contrastive(const Tensor& video, const Tensor& text, const LossWeights& weights);

/// caption + lambda1 * causal + lambda2 * temporal
Var finetune(Var caption, Var causal, Var temporal, const LossWeights& weights);
double finetune(double caption, double causal, double temporal, const LossWeights& weights);

}  // namespace losses
}  // namespace ctrm
