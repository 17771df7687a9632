#include <doctest.h>

#include <cmath>
#include <random>

#include "aslpar/losses.hpp"
#include "aslpar/model.hpp"
#include "aslpar/rng.hpp"
#include "support.hpp"

using namespace aslpar;

namespace {

double cse_value(const Tensor& probs, const Tensor& targets, const ClassWeights& w) {
  Graph g;
  return weighted_cse(g.input(probs), targets, w).value().item();
}

double gl_value(const Tensor& probs, const Tensor& targets) {
  Graph g;
  return gl_loss(g.input(probs), targets).value().item();
}

ClassWeights weights_of(std::vector<float> w) {
  const std::size_t n = w.size();
  return {Tensor::vector(std::move(w)), Tensor(Shape{n})};
}

}  // namespace

TEST_CASE("class weights from positive ratios") {
  const ClassWeights cw = compute_weights({{1, 0, 1}, {1, 0, 1}, {1, 0, 1}, {1, 0, 0}});
  CHECK(cw.ratios[0] == 1.0F);
  CHECK(cw.weights[0] == doctest::Approx(0.3679).epsilon(1e-4));
  CHECK(cw.ratios[1] == 0.0F);
  CHECK(cw.weights[1] == 1.0F);
  CHECK(cw.ratios[2] == 0.75F);
  CHECK(cw.weights[2] == doctest::Approx(0.4724).epsilon(1e-4));
  CHECK_THROWS_AS(compute_weights({}), std::invalid_argument);
  CHECK_THROWS_AS(compute_weights({{1, 0}, {1}}), std::invalid_argument);
}

TEST_CASE("weighted cse closed forms") {
  CHECK(cse_value(Tensor::matrix(1, 1, {0.5F}), Tensor::matrix(1, 1, {1.0F}), weights_of({1.0F})) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));
  CHECK(cse_value(Tensor::matrix(1, 1, {1.0F - kProbFloor}), Tensor::matrix(1, 1, {1.0F}), weights_of({1.0F})) <
        1e-5);
  const double e1 = std::exp(-1.0);
  const double pair = cse_value(Tensor::matrix(1, 2, {0.5F, 0.5F}), Tensor::matrix(1, 2, {1.0F, 0.0F}),
                                weights_of({1.0F, static_cast<float>(e1)}));
  CHECK(pair == doctest::Approx(std::log(2.0) * (1.0 + e1)).epsilon(1e-6));
  CHECK(pair == doctest::Approx(0.9481).epsilon(1e-4));
  // Averaged over samples, summed over attributes.
  CHECK(cse_value(Tensor::matrix(2, 2, {0.5F, 0.5F, 0.5F, 0.5F}), Tensor::matrix(2, 2, {1, 0, 0, 1}),
                  weights_of({1.0F, 1.0F})) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("gl loss closed forms") {
  CHECK(gl_value(Tensor::matrix(1, 1, {0.25F}), Tensor::matrix(1, 1, {1.0F})) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-6));
  CHECK(gl_value(Tensor::matrix(1, 1, {0.25F}), Tensor::matrix(1, 1, {0.0F})) ==
        doctest::Approx(gl_value(Tensor::matrix(1, 1, {0.75F}), Tensor::matrix(1, 1, {1.0F}))).epsilon(1e-6));
  CHECK(gl_value(Tensor::matrix(1, 2, {1.0F - kProbFloor, kProbFloor}), Tensor::matrix(1, 2, {1.0F, 0.0F})) < 1e-5);
}

TEST_CASE("total loss") {
  Graph g;
  Var cse = g.input(Tensor::scalar(1.0F)), gl = g.input(Tensor::scalar(2.0F));
  CHECK(total_loss(cse, gl, 0.5F).value().item() == doctest::Approx(2.0));
  CHECK(total_loss(cse, gl, 0.0F).value().item() == 1.0F);
  CHECK(total_loss(g.input(Tensor::scalar(0.9481F)), g.input(Tensor::scalar(1.3863F)), kDefaultAlpha).value().item() ==
        doctest::Approx(1.64125).epsilon(1e-5));
  CHECK_THROWS_AS(total_loss(cse, gl, -0.1F), std::invalid_argument);
  CHECK(kDefaultAlpha == 0.5F);
}

TEST_CASE("loss properties on random batches") {
  Rng rng = make_rng(12);
  std::uniform_real_distribution<float> unit(0.01F, 0.99F);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + trial % 5, n = 1 + trial % 7;
    Tensor probs(Shape{m, n}), targets(Shape{m, n});
    for (std::size_t i = 0; i < probs.size(); ++i) {
      probs[i] = unit(rng);
      targets[i] = coin(rng) ? 1.0F : 0.0F;
    }
    const double unit_w = cse_value(probs, targets, ClassWeights::uniform(n));
    const double gl = gl_value(probs, targets);
    CHECK(unit_w >= 0.0);
    CHECK(std::isfinite(unit_w));
    CHECK(unit_w == doctest::Approx(gl).epsilon(1e-6));

    // Moving one probability toward its target lowers the loss.
    const std::size_t k = trial % probs.size();
    Tensor closer = probs;
    closer[k] += targets[k] == 1.0F ? (1.0F - probs[k]) / 2 : -probs[k] / 2;
    const ClassWeights w = weights_of(std::vector<float>(n, 0.6F));
    CHECK(cse_value(closer, targets, w) < cse_value(probs, targets, w));
  }
}

TEST_CASE("loss shape and domain errors") {
  Graph g;
  CHECK_THROWS_AS(weighted_cse(g.input(Tensor::matrix(1, 2, {0.5F, 0.5F})), Tensor::matrix(1, 1, {1.0F}),
                               weights_of({1.0F, 1.0F})),
                  DimensionError);
  CHECK_THROWS_AS(gl_loss(g.input(Tensor::matrix(1, 1, {1.0F})), Tensor::matrix(1, 1, {1.0F})), std::domain_error);
}
