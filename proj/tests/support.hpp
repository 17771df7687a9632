#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "aslpar/graph.hpp"
#include "aslpar/ops.hpp"
#include "aslpar/rng.hpp"
#include "aslpar/tensor.hpp"
#include "reference.hpp"

namespace aslpar::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, float lo = -1.0F, float hi = 1.0F) {
  std::uniform_real_distribution<float> dist(lo, hi);
  Tensor t(shape);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

/// Builds a graph from marked inputs and returns its (not necessarily
/// scalar) output.
using GraphFn = std::function<Var(Graph&, const std::vector<Var>&)>;
/// The same map evaluated in double.
using RefFn = std::function<reference::DTensor(const std::vector<reference::DTensor>&)>;

struct GradCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  /// Largest |finite difference| seen, the scale for a normwise error.
  double max_abs_gradient = 0.0;
  /// Largest |float forward - double forward| / max(1, |double forward|).
  double forward_mismatch = 0.0;
  std::size_t checked = 0;
};

/// Gradient of L = sum(w * f(inputs)) for a fixed random projection w.
/// The analytic side backpropagates through the float graph; the numeric
/// side takes central differences of the double reference with the given
/// step. Relative error per entry: |a - fd| / max(|a|, |fd|, 1e-6).
inline GradCheck check_gradients(const std::vector<Tensor>& inputs, const GraphFn& fn, const RefFn& ref,
                                 std::uint64_t seed, double step = 1e-3) {
  Rng rng = make_rng(seed);
  Graph g;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(g.parameter(x));
  Var out = fn(g, vars);
  const Tensor proj = random_tensor(out.shape(), rng, 0.5F, 1.5F);
  Var loss = ops::sum(ops::mul(out, g.input(proj)));
  const Gradients grads = g.backward(loss);

  std::vector<reference::DTensor> dins;
  for (const auto& x : inputs) dins.push_back(reference::from_float(x));
  auto evaluate = [&](const std::vector<reference::DTensor>& xs) {
    const reference::DTensor y = ref(xs);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += static_cast<double>(proj[i]) * y[i];
    return acc;
  };

  GradCheck result;
  const reference::DTensor base = ref(dins);
  if (base.size() != out.value().size()) throw std::logic_error("reference output size differs");
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double diff = std::fabs(static_cast<double>(out.value()[i]) - base[i]);
    result.forward_mismatch = std::max(result.forward_mismatch, diff / std::max(1.0, std::fabs(base[i])));
  }

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& analytic = grads.at(vars[k].id);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      std::vector<reference::DTensor> plus = dins, minus = dins;
      plus[k][i] += step;
      minus[k][i] -= step;
      const double fd = (evaluate(plus) - evaluate(minus)) / (2.0 * step);
      const double a = analytic[i];
      const double err = std::fabs(a - fd);
      result.max_rel_error = std::max(result.max_rel_error, err / std::max({std::fabs(a), std::fabs(fd), 1e-6}));
      result.max_abs_error = std::max(result.max_abs_error, err);
      result.max_abs_gradient = std::max(result.max_abs_gradient, std::fabs(fd));
      ++result.checked;
    }
  }
  return result;
}

}  // namespace aslpar::testing
