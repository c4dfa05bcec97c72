#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ctrm/autodiff.hpp"
#include "ctrm/tensor.hpp"

// Differentiable primitives. Each one records itself on the tape of its first
// input. Shapes are checked eagerly; there is no broadcasting apart from the
// row-vector bias in `add_row`.
namespace ctrm::ops {

inline constexpr double kLayerNormEps = 1e-5;

enum class Mask {
  none,
  /// Row i may only see columns j <= i; masked entries are exactly zero.
  lower_triangular,
};

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// x[m x d] + bias broadcast over rows; bias is [d] or [1 x d].
Var add_row(Var x, Var bias);
Var relu(Var x);
Var row_softmax(Var x, Mask mask = Mask::none);
Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEps);
/// Gathers rows of `table`; the backward pass scatter-adds into the table.
Var embedding(Var table, std::span<const std::size_t> ids);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Element-wise sum of equally shaped inputs.
Var add_all(std::span<const Var> parts);
Var sum(Var x);
Var mean(Var x);
/// Column means, [m x d] -> [1 x d].
Var mean_rows(Var x);
/// Row t of the result is x[t+1] - x[t]; needs at least two rows.
Var consecutive_diff(Var x);
/// Each row divided by its Euclidean norm; zero rows are rejected.
Var row_l2_normalize(Var x);
/// Mean over scored positions of -log softmax(logits)[i][targets[i]].
/// Positions whose target equals `ignore_id` are left out of the mean.
Var cross_entropy(Var logits, std::span<const std::size_t> targets, std::size_t ignore_id = static_cast<std::size_t>(-1));
/// Mean over rows with non-zero target mass of KL(row-normalised target || probs row),
/// using 0 log 0 = 0. Returns a constant zero when no row carries mass.
Var kl_rows(const Tensor& target, Var probs);

// Plain (non-recording) kernels shared with the rest of the library.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor row_softmax(const Tensor& x, Mask mask = Mask::none);

}  // namespace ctrm::ops
