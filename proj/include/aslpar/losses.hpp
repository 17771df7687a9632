#pragma once

#include <vector>

#include "aslpar/graph.hpp"
#include "aslpar/labels.hpp"
#include "aslpar/tensor.hpp"

namespace aslpar {

/// Imbalance weights w_j = exp(-r_j) from positive ratios r_j.
struct ClassWeights {
  Tensor weights;  // [N]
  Tensor ratios;   // [N]

  static ClassWeights uniform(std::size_t n);
};

ClassWeights compute_weights(const std::vector<LabelVector>& train_labels);

/// Stacks label vectors into a float [M x N] target matrix.
Tensor targets_matrix(const std::vector<LabelVector>& labels);

/// Weighted binary cross-entropy, averaged over samples and summed over
/// attributes. probs: [M x N] node with entries inside (0,1).
Var weighted_cse(Var probs, const Tensor& targets, const ClassWeights& weights);

/// Unweighted binary cross-entropy of similarity scores, same reduction.
Var gl_loss(Var gl_scores, const Tensor& targets);

/// cse + alpha * gl; alpha must be non-negative.
Var total_loss(Var cse, Var gl, float alpha);

inline constexpr float kDefaultAlpha = 0.5F;

}  // namespace aslpar
