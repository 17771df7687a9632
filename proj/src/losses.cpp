#include "aslpar/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "aslpar/ops.hpp"

namespace aslpar {

ClassWeights ClassWeights::uniform(std::size_t n) { return {Tensor(Shape{n}, 1.0F), Tensor(Shape{n}, 0.0F)}; }

ClassWeights compute_weights(const std::vector<LabelVector>& train_labels) {
  if (train_labels.empty()) throw std::invalid_argument("compute_weights: empty label list");
  const std::size_t n = train_labels.front().size();
  std::vector<std::size_t> counts(n, 0);
  for (const auto& y : train_labels) {
    if (y.size() != n) throw std::invalid_argument("compute_weights: inconsistent label lengths");
    for (std::size_t j = 0; j < n; ++j) counts[j] += y[j] ? 1 : 0;
  }
  ClassWeights cw{Tensor(Shape{n}), Tensor(Shape{n})};
  const double m = static_cast<double>(train_labels.size());
  for (std::size_t j = 0; j < n; ++j) {
    const double r = static_cast<double>(counts[j]) / m;
    cw.ratios[j] = static_cast<float>(r);
    cw.weights[j] = static_cast<float>(std::exp(-r));
  }
  return cw;
}

Tensor targets_matrix(const std::vector<LabelVector>& labels) {
  if (labels.empty()) throw std::invalid_argument("targets_matrix: no labels");
  const std::size_t n = labels.front().size();
  Tensor t(Shape{labels.size(), n});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].size() != n) throw DimensionError("targets_matrix: inconsistent label lengths");
    for (std::size_t j = 0; j < n; ++j) t[i * n + j] = labels[i][j] ? 1.0F : 0.0F;
  }
  return t;
}

Var weighted_cse(Var probs, const Tensor& targets, const ClassWeights& weights) {
  return ops::weighted_bce(probs, targets, weights.weights);
}

Var gl_loss(Var gl_scores, const Tensor& targets) {
  const std::size_t n = gl_scores.shape()[gl_scores.shape().rank() - 1];
  return ops::weighted_bce(gl_scores, targets, Tensor(Shape{n}, 1.0F));
}

Var total_loss(Var cse, Var gl, float alpha) {
  if (!(alpha >= 0.0F)) throw std::invalid_argument("total_loss: alpha must be non-negative");
  return ops::add(cse, ops::scale(gl, alpha));
}

}  // namespace aslpar
