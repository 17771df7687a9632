#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aslpar/graph.hpp"
#include "aslpar/labels.hpp"
#include "aslpar/tensor.hpp"

namespace aslpar {

/// Probabilities and similarity scores are clamped to [kProbFloor, 1 - kProbFloor].
inline constexpr float kProbFloor = 1e-6F;

struct ModelConfig {
  std::size_t image_height = 48;
  std::size_t image_width = 24;
  std::size_t channels = 3;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 32;
  std::size_t fusion_layers = 2;
  std::size_t attention_heads = 4;
  std::size_t mlp_hidden = 64;
  std::size_t attribute_count = 12;
  float aggregator_temperature = 0.1F;

  /// Throws std::invalid_argument on any violated invariant.
  void validate() const;
  std::size_t token_count() const { return (image_height / patch_size) * (image_width / patch_size); }
  std::size_t patch_features() const { return channels * patch_size * patch_size; }
  Shape image_shape() const { return Shape{channels, image_height, image_width}; }

  nlohmann::json to_json() const;
  /// Unknown keys are rejected; missing keys keep their defaults.
  static ModelConfig from_json(const nlohmann::json& j);

  bool operator==(const ModelConfig&) const = default;
};

struct FusionLayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor qkv_weight, qkv_bias;  // [d x 3d], [3d]
  Tensor out_weight, out_bias;  // [d x d], [d]
  Tensor ln2_gain, ln2_bias;
  Tensor mlp_in_weight, mlp_in_bias;    // [d x hidden], [hidden]
  Tensor mlp_out_weight, mlp_out_bias;  // [hidden x d], [d]
};

/// All trainable weights of the attribute model.
struct ModelParams {
  Tensor patch_weight;     // [C*P*P x d]
  Tensor patch_bias;       // [d]
  Tensor positional;       // [T x d]
  Tensor attribute_table;  // [N x d]
  std::vector<FusionLayerParams> layers;
  Tensor head_weight;  // [N x d], row j is head j
  Tensor head_bias;    // [N]

  /// Visits every tensor with its checkpoint name, in a fixed order.
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  std::size_t parameter_count() const;
};

ModelParams init_params(const ModelConfig& config, std::uint64_t seed);
/// Every tensor present, finite and shaped per config; throws otherwise.
void validate_params(const ModelParams& params, const ModelConfig& config);

/// Shape every named parameter must have under `config`.
Shape expected_shape(const std::string& name, const ModelConfig& config);

/// A model together with its configuration and attribute schema.
struct Model {
  ModelConfig config;
  AttributeSchema schema;
  ModelParams params;
};

/// Graph handles for every parameter tensor.
struct LayerVars {
  Var ln1_gain, ln1_bias, qkv_weight, qkv_bias, out_weight, out_bias;
  Var ln2_gain, ln2_bias, mlp_in_weight, mlp_in_bias, mlp_out_weight, mlp_out_bias;
};

struct ModelVars {
  Var patch_weight, patch_bias, positional, attribute_table;
  std::vector<LayerVars> layers;
  Var head_weight, head_bias;

  /// Parameter node ids in ModelParams::for_each order (trainable binds only).
  std::vector<NodeId> ids() const;
};

/// Records the parameters on `g`: as marked nodes when `trainable`,
/// otherwise as constants (the frozen-model case).
ModelVars bind_params(Graph& g, const ModelParams& params, bool trainable);

/// Graph nodes of one forward pass.
struct ForwardVars {
  Var image_tokens;  // [T x d]
  Var text_tokens;   // [N x d]
  Var fused_image;   // [T x d]
  Var fused_text;    // [N x d]
  Var probs;         // [N]
  Var gl_scores;     // [N]
};

/// Tensor values of one forward pass.
struct ForwardOutput {
  Tensor image_tokens, text_tokens, fused_image, fused_text, probs, gl_scores;
};

ForwardOutput values_of(const ForwardVars& v);

Var patch_embed(Var image, const ModelVars& vars, const ModelConfig& config);
/// Attribute embeddings, plus `prompt_offsets` [N x d] when given.
Var text_embed(const AttributeSchema& schema, const ModelVars& vars, const ModelConfig& config,
               std::optional<Var> prompt_offsets = std::nullopt);
/// Joint pre-norm transformer over [image; text] tokens, split back afterwards.
std::pair<Var, Var> fuse(Var image_tokens, Var text_tokens, const ModelVars& vars, const ModelConfig& config);
/// probs_j = clamp(sigmoid(<w_j, token_j> + b_j)).
Var predict(Var fused_text, const ModelVars& vars);
/// Attribute-conditioned pooling of visual tokens, then cosine to the
/// attribute embedding mapped affinely to (0,1).
Var aggregate_gl(Var image_tokens, Var text_tokens, float temperature);

ForwardVars forward(Var image, const Model& model, const ModelVars& vars,
                    std::optional<Var> prompt_offsets = std::nullopt);

/// Gradient-free convenience: builds a throwaway graph with frozen params.
ForwardOutput infer(const Model& model, const Tensor& image, const Tensor* prompt_offsets = nullptr);

/// Checkpoint directory: one DTSR per named parameter, config.json, schema.json.
void save_checkpoint(const Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);
/// Combined content hash of all parameter tensors.
std::uint64_t hash_params(const ModelParams& params);

}  // namespace aslpar
