#pragma once

// Finite-difference cases covering every differentiable operation, plus the
// full model loss with respect to an additive input noise.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "aslpar/attack.hpp"
#include "aslpar/defense.hpp"
#include "aslpar/losses.hpp"
#include "aslpar/model.hpp"
#include "aslpar/ops.hpp"
#include "reference.hpp"
#include "support.hpp"

namespace aslpar::testing {

struct GradCase {
  std::string name;
  std::vector<Tensor> inputs;
  GraphFn fn;
  RefFn ref;
};

namespace detail {

// Moves entries at least `gap` away from each kink so a central difference
// never straddles one.
inline Tensor away_from(Tensor t, std::initializer_list<float> kinks, float gap) {
  for (float& v : t.data()) {
    for (float k : kinks) {
      if (std::fabs(v - k) < gap) v = v < k ? k - gap : k + gap;
    }
  }
  return t;
}

// Entries of magnitude in [lo, hi] with random sign: rows stay well away
// from the zero-norm singularity of unit normalisation.
inline Tensor signed_magnitude(Shape shape, Rng& rng, float lo, float hi) {
  std::uniform_real_distribution<float> mag(lo, hi);
  std::bernoulli_distribution coin(0.5);
  Tensor t(shape);
  for (float& v : t.data()) v = coin(rng) ? mag(rng) : -mag(rng);
  return t;
}

inline Tensor binary(Shape shape, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  Tensor t(shape);
  for (float& v : t.data()) v = coin(rng) ? 1.0F : 0.0F;
  return t;
}

}  // namespace detail

inline constexpr const char* kModelCase = "model_loss_wrt_noise";

/// The model used by the input-noise check: a single 8x8 patch.
inline ModelConfig one_patch_config() {
  ModelConfig c;
  c.image_height = 8;
  c.image_width = 8;
  c.patch_size = 8;
  c.embed_dim = 8;
  c.fusion_layers = 1;
  c.attention_heads = 2;
  c.mlp_hidden = 16;
  c.attribute_count = 4;
  return c;
}

inline std::vector<GradCase> gradient_cases(std::uint64_t seed) {
  namespace R = reference;
  using V = const std::vector<Var>&;
  using D = const std::vector<R::DTensor>&;
  Rng rng = make_rng(seed);
  auto rnd = [&](Shape s, float lo = -1.0F, float hi = 1.0F) { return random_tensor(s, rng, lo, hi); };
  std::vector<GradCase> c;

  c.push_back({"add", {rnd({3, 4}), rnd({3, 4})}, [](Graph&, V v) { return ops::add(v[0], v[1]); },
               [](D d) { return R::add(d[0], d[1]); }});
  c.push_back({"sub", {rnd({3, 4}), rnd({3, 4})}, [](Graph&, V v) { return ops::sub(v[0], v[1]); },
               [](D d) { return R::sub(d[0], d[1]); }});
  c.push_back({"mul", {rnd({3, 4}), rnd({3, 4})}, [](Graph&, V v) { return ops::mul(v[0], v[1]); },
               [](D d) { return R::mul(d[0], d[1]); }});
  c.push_back({"scale", {rnd({3, 4})}, [](Graph&, V v) { return ops::scale(v[0], 2.5F); },
               [](D d) { return R::affine(d[0], 2.5, 0.0); }});
  c.push_back({"affine", {rnd({3, 4})}, [](Graph&, V v) { return ops::affine(v[0], -1.5F, 0.3F); },
               [](D d) { return R::affine(d[0], -1.5, 0.3F); }});
  c.push_back({"add_row_bias", {rnd({3, 4}), rnd({4})}, [](Graph&, V v) { return ops::add_row_bias(v[0], v[1]); },
               [](D d) { return R::add_row_bias(d[0], d[1]); }});
  c.push_back({"matmul", {rnd({3, 5}), rnd({5, 2})}, [](Graph&, V v) { return ops::matmul(v[0], v[1]); },
               [](D d) { return R::matmul(d[0], d[1]); }});
  c.push_back({"transpose", {rnd({3, 4})}, [](Graph&, V v) { return ops::transpose(v[0]); },
               [](D d) { return R::transpose(d[0]); }});
  c.push_back({"reshape", {rnd({3, 4})}, [](Graph&, V v) { return ops::reshape(v[0], Shape{2, 6}); },
               [](D d) { return R::reshape(d[0], {2, 6}); }});
  c.push_back({"sigmoid", {rnd({3, 4}, -3.0F, 3.0F)}, [](Graph&, V v) { return ops::sigmoid(v[0]); },
               [](D d) { return R::sigmoid(d[0]); }});
  c.push_back({"relu", {detail::away_from(rnd({3, 4}), {0.0F}, 0.05F)}, [](Graph&, V v) { return ops::relu(v[0]); },
               [](D d) { return R::relu(d[0]); }});
  c.push_back({"softmax_rows", {rnd({3, 4}, -2.0F, 2.0F)}, [](Graph&, V v) { return ops::softmax(v[0], 1); },
               [](D d) { return R::softmax(d[0], 1); }});
  c.push_back({"softmax_cols", {rnd({3, 4}, -2.0F, 2.0F)}, [](Graph&, V v) { return ops::softmax(v[0], 0); },
               [](D d) { return R::softmax(d[0], 0); }});
  c.push_back({"layer_norm", {rnd({3, 6}), rnd({6}, 0.5F, 1.5F), rnd({6})},
               [](Graph&, V v) { return ops::layer_norm(v[0], v[1], v[2]); },
               [](D d) { return R::layer_norm(d[0], d[1], d[2]); }});
  c.push_back({"embedding", {rnd({5, 3})},
               [](Graph&, V v) {
                 static const std::size_t idx[] = {0, 2, 2, 4};
                 return ops::embedding(v[0], idx);
               },
               [](D d) { return R::embedding(d[0], {0, 2, 2, 4}); }});
  c.push_back({"concat_rows", {rnd({2, 3}), rnd({4, 3})}, [](Graph&, V v) { return ops::concat_rows(v[0], v[1]); },
               [](D d) { return R::concat_rows(d[0], d[1]); }});
  c.push_back({"slice_rows", {rnd({5, 3})}, [](Graph&, V v) { return ops::slice_rows(v[0], 1, 3); },
               [](D d) { return R::slice_rows(d[0], 1, 3); }});
  c.push_back({"sum", {rnd({3, 4})}, [](Graph&, V v) { return ops::sum(v[0]); }, [](D d) { return R::sum(d[0]); }});
  c.push_back({"mean", {rnd({3, 4})}, [](Graph&, V v) { return ops::mean(v[0]); }, [](D d) { return R::mean(d[0]); }});
  c.push_back({"sum_last_axis", {rnd({3, 4})}, [](Graph&, V v) { return ops::sum_last_axis(v[0]); },
               [](D d) { return R::sum_last_axis(d[0]); }});
  c.push_back({"clamp", {detail::away_from(rnd({3, 4}), {-0.5F, 0.5F}, 0.05F)},
               [](Graph&, V v) { return ops::clamp(v[0], -0.5F, 0.5F); }, [](D d) { return R::clamp(d[0], -0.5, 0.5); }});
  c.push_back({"conv2d_same", {rnd({2, 5, 4}), rnd({3, 2, 3, 3}), rnd({3})},
               [](Graph&, V v) { return ops::conv2d_same(v[0], v[1], v[2]); },
               [](D d) { return R::conv2d_same(d[0], d[1], d[2]); }});
  c.push_back({"attention", {rnd({5, 12})}, [](Graph&, V v) { return ops::multi_head_attention(v[0], 2); },
               [](D d) { return R::attention(d[0], 2); }});
  c.push_back({"normalize_rows", {detail::signed_magnitude({3, 4}, rng, 0.3F, 1.0F)}, [](Graph&, V v) { return ops::normalize_rows(v[0]); },
               [](D d) { return R::normalize_rows(d[0]); }});
  c.push_back({"row_dot", {rnd({3, 4}), rnd({3, 4})}, [](Graph&, V v) { return ops::row_dot(v[0], v[1]); },
               [](D d) { return R::row_dot(d[0], d[1]); }});
  c.push_back({"patchify", {rnd({2, 4, 6})}, [](Graph&, V v) { return ops::patchify(v[0], 2); },
               [](D d) { return R::patchify(d[0], 2); }});
  c.push_back({"add_window", {rnd({2, 5, 5}), rnd({2, 2, 3})},
               [](Graph&, V v) { return ops::add_window(v[0], v[1], 1, 2); },
               [](D d) { return R::add_window(d[0], d[1], 1, 2); }});

  const Tensor targets = detail::binary({3, 4}, rng);
  const Tensor weights = rnd({4}, 0.3F, 1.0F);
  const R::DTensor dt = R::from_float(targets), dw = R::from_float(weights);
  c.push_back({"weighted_bce", {rnd({3, 4}, 0.2F, 0.8F)},
               [targets, weights](Graph&, V v) { return ops::weighted_bce(v[0], targets, weights); },
               [dt, dw](D d) { return R::weighted_bce(d[0], dt, dw); }});
  const ClassWeights cw{weights, Tensor(Shape{4}, 0.5F)};
  c.push_back({"total_loss", {rnd({3, 4}, 0.2F, 0.8F), rnd({3, 4}, 0.2F, 0.8F)},
               [targets, cw](Graph&, V v) {
                 return total_loss(weighted_cse(v[0], targets, cw), gl_loss(v[1], targets), 0.5F);
               },
               [dt, dw](D d) {
                 return R::add(R::weighted_bce(d[0], dt, dw), R::affine(R::weighted_bce(d[1], dt, R::DTensor({4}, 1.0)), 0.5, 0.0));
               }});
  c.push_back({"aggregate_gl", {rnd({5, 6}), rnd({3, 6})}, [](Graph&, V v) { return aggregate_gl(v[0], v[1], 0.1F); },
               [](D d) { return R::aggregate_gl(d[0], d[1], 0.1F); }});

  // Small filter weights and a mid-range image keep the output clamp inactive.
  c.push_back({"filter_image",
               {rnd({3, 6, 5}, 0.35F, 0.65F), rnd({3, 3, 3, 3}, -0.02F, 0.02F), rnd({3}, -0.02F, 0.02F)},
               [](Graph&, V v) { return filter_image(v[0], v[1], v[2], true); },
               [](D d) { return R::clamp(R::add(d[0], R::conv2d_same(d[0], d[1], d[2])), 0.0, 1.0); }});

  // Full model loss with respect to the noise on a single-patch model.
  auto model = std::make_shared<Model>();
  model->config = one_patch_config();
  model->schema = AttributeSchema::from_group_sizes({1, 3});
  model->params = init_params(model->config, derive_seed(seed, Stream::kInit));
  const Tensor image = rnd(model->config.image_shape(), 0.3F, 0.7F);
  const Tensor y = detail::binary({1, 4}, rng);
  const ClassWeights mw{rnd({4}, 0.3F, 1.0F), Tensor(Shape{4}, 0.5F)};
  const R::DTensor dimg = R::from_float(image), dy = R::from_float(y), dmw = R::from_float(mw.weights);
  c.push_back({kModelCase, {rnd(model->config.image_shape(), -0.04F, 0.04F)},
               [model, image, y, mw](Graph& g, V v) {
                 const Perturbation layout = Perturbation::zeros(NoiseMode::kGlobal, model->config.image_shape());
                 Var x = apply_noise(g.input(image), v[0], layout);
                 const ForwardVars f = forward(x, *model, bind_params(g, model->params, false));
                 const Shape row{1, model->config.attribute_count};
                 return total_loss(weighted_cse(ops::reshape(f.probs, row), y, mw),
                                   gl_loss(ops::reshape(f.gl_scores, row), y), kDefaultAlpha);
               },
               [model, dimg, dy, dmw](D d) {
                 const R::DForward f = R::forward(*model, R::clamp(R::add(dimg, d[0]), 0.0, 1.0));
                 const std::vector<std::size_t> row{1, model->config.attribute_count};
                 const R::DTensor cse = R::weighted_bce(R::reshape(f.probs, row), dy, dmw);
                 const R::DTensor gl = R::weighted_bce(R::reshape(f.gl_scores, row), dy, R::DTensor(row, 1.0));
                 return R::add(cse, R::affine(gl, kDefaultAlpha, 0.0));
               }});
  return c;
}

}  // namespace aslpar::testing
