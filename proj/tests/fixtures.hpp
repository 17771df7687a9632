#pragma once

// Tiny model and dataset used where a trained victim is not needed.

#include <cstdint>
#include <random>

#include "aslpar/dataset.hpp"
#include "aslpar/model.hpp"
#include "aslpar/rng.hpp"
#include "support.hpp"

namespace aslpar::testing {

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.image_height = 16;
  c.image_width = 8;
  c.patch_size = 8;
  c.embed_dim = 8;
  c.fusion_layers = 1;
  c.attention_heads = 2;
  c.mlp_hidden = 16;
  c.attribute_count = 4;
  return c;
}

inline Model tiny_model(std::uint64_t seed) {
  const ModelConfig c = tiny_config();
  return Model{c, AttributeSchema::from_group_sizes({1, 3}), init_params(c, derive_seed(seed, Stream::kInit))};
}

/// Uniform random images with one positive per non-gender group.
inline Dataset tiny_dataset(std::size_t count, std::uint64_t seed) {
  const ModelConfig c = tiny_config();
  Dataset d;
  d.schema = AttributeSchema::from_group_sizes({1, 3});
  Rng rng = make_rng(derive_seed(seed, Stream::kData));
  std::uniform_int_distribution<int> coin(0, 1), pick(1, 3);
  for (std::size_t i = 0; i < count; ++i) {
    d.images.push_back(random_tensor(c.image_shape(), rng, 0.0F, 1.0F));
    LabelVector y(4, 0);
    y[0] = static_cast<std::uint8_t>(coin(rng));
    y[static_cast<std::size_t>(pick(rng))] = 1;
    d.labels.push_back(y);
  }
  return d;
}

}  // namespace aslpar::testing
