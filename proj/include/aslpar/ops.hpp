#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "aslpar/graph.hpp"
#include "aslpar/tensor.hpp"

// Differentiable operations recorded on a Graph. Every op validates shapes
// eagerly and throws DimensionError naming the offending shapes.
namespace aslpar::ops {

// Elementwise on equal shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float factor);
/// factor * a + offset
Var affine(Var a, float factor, float offset);
/// x[m x n] + bias[n] broadcast over rows.
Var add_row_bias(Var x, Var bias);

Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);

Var sigmoid(Var x);
Var relu(Var x);
/// Max-subtracted softmax along `axis`.
Var softmax(Var x, std::size_t axis);
/// Row-wise layer normalisation of x[m x n] with gain[n] and bias[n].
Var layer_norm(Var x, Var gain, Var bias, float eps = 1e-5F);
/// Gathers rows of table[V x d].
Var embedding(Var table, std::span<const std::size_t> indices);

Var concat_rows(Var a, Var b);
Var slice_rows(Var x, std::size_t start, std::size_t count);

Var sum(Var x);
Var mean(Var x);
/// Collapses the last axis: [.. x n] -> [..]; a rank-1 input yields [1].
Var sum_last_axis(Var x);
/// Gradient passes where lo <= x <= hi.
Var clamp(Var x, float lo, float hi);

/// x[C x H x W] conv kernel[C' x C x k x k] + bias[C'], zero padding (k-1)/2.
Var conv2d_same(Var x, Var kernel, Var bias);

/// Fused multi-head self-attention over packed qkv[S x 3d] -> [S x d].
Var multi_head_attention(Var qkv, std::size_t heads);

/// Rows scaled to unit L2 norm; rows with norm below kNormFloor map to zero.
Var normalize_rows(Var x);
/// Per-row dot product of equal-shape matrices: [m x n], [m x n] -> [m].
Var row_dot(Var a, Var b);

/// image[C x H x W] -> [(H/P)(W/P) x C*P*P]; tokens row-major over the
/// patch grid, features ordered (channel, row, col).
Var patchify(Var image, std::size_t patch);
/// image[C x H x W] with patch[C x h x w] added at (row0, col0).
Var add_window(Var image, Var patch, std::size_t row0, std::size_t col0);

/// -(1/M) sum_ij w_j (y_ij log p_ij + (1-y_ij) log(1-p_ij)) for probs[M x N].
/// Probabilities must lie strictly inside (0, 1).
Var weighted_bce(Var probs, const Tensor& targets, const Tensor& weights);

}  // namespace aslpar::ops

namespace aslpar {

inline constexpr float kNormFloor = 1e-12F;

struct CosineResult {
  float value = 0.0F;
  /// True when either vector had (near) zero norm; value is then 0.
  bool degenerate = false;
};

CosineResult cosine_similarity(std::span<const float> u, std::span<const float> v);

/// Per-head attention probabilities [heads][S x S] for packed qkv[S x 3d].
std::vector<Tensor> attention_weights(const Tensor& qkv, std::size_t heads);

}  // namespace aslpar
