#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aslpar/attack.hpp"
#include "aslpar/dataset.hpp"
#include "aslpar/model.hpp"
#include "aslpar/optim.hpp"
#include "aslpar/training.hpp"

namespace aslpar {

/// Same-size convolution placed in front of the vision encoder.
struct FilterParams {
  Tensor kernel;  // [C x C x k x k]
  Tensor bias;    // [C]
  bool residual = true;

  /// Zero kernel and bias: with the residual path this is the identity.
  static FilterParams identity(std::size_t channels = 3, std::size_t kernel_size = 3);
  void validate(std::size_t channels) const;
};

/// Offsets added to the attribute embeddings before fusion.
struct PromptParams {
  Tensor offsets;  // [N x d]

  static PromptParams zeros(std::size_t attributes, std::size_t dim);
};

struct DefenseParams {
  FilterParams filter = FilterParams::identity();
  PromptParams prompt;
  bool use_filter = true;
  bool use_prompt = true;

  static DefenseParams identity(const ModelConfig& config);
  void validate(const ModelConfig& config) const;
};

/// clamp(x + conv(x), 0, 1) with the residual path, clamp(conv(x), 0, 1) without.
Tensor filter_image(const Tensor& x, const FilterParams& f);
Var filter_image(Var x, Var kernel, Var bias, bool residual);

struct DefenseConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  /// Learning rate of the prompt offsets.
  float lr = 4e-4F;
  /// Learning rate of the filter kernel and bias.
  float filter_lr = 3e-4F;
  std::size_t warmup_epochs = 2;
  float warmup_ratio = 0.01F;
  float momentum = 0.9F;
  float weight_decay = 0.0F;
  /// Per-group gradient norm cap (filter and prompt separately); 0 disables.
  float max_grad_norm = 10.0F;
  float alpha = kDefaultAlpha;
  std::size_t kernel_size = 3;
  bool use_filter = true;
  bool use_prompt = true;
  /// Leave every other training sample clean so the defense is also held
  /// to the clean-image predictions.
  bool mix_clean = true;
  std::uint64_t seed = 0;

  void validate() const;
  LrSchedule schedule() const { return {lr, epochs, warmup_epochs, warmup_ratio}; }
  nlohmann::json to_json() const;
  /// Unknown keys are rejected.
  static DefenseConfig from_json(const nlohmann::json& j);
};

struct DefenseResult {
  DefenseParams params;
  std::vector<EpochRecord> curve;
};

/// Trains filter and/or prompt offsets on noise-applied images against the
/// true labels with cse + alpha * gl. Noisy samples cycle through `noises`;
/// with mix_clean the odd-indexed samples stay clean. Model parameters and
/// noise are only read.
DefenseResult train_defense(const Model& model, const std::vector<Perturbation>& noises, const Dataset& data,
                            const DefenseConfig& cfg);

/// Optional noise, then the filter, then the model with prompt-adjusted
/// attribute embeddings. Null arguments skip that stage.
ForwardOutput defended_forward(const Model& model, const Tensor& image, const Perturbation* noise,
                               const DefenseParams* defense);

/// Probabilities [M x N] through defended_forward.
Tensor predict_defended(const Model& model, std::span<const Tensor> images, const Perturbation* noise,
                        const DefenseParams* defense);

struct DefenseArtifact {
  DefenseParams params;
  std::string noise_hash;
  nlohmann::json config;
};

/// Directory with filter.kernel.dtsr, filter.bias.dtsr, prompt.offsets.dtsr
/// and defense.json.
void save_defense(const DefenseArtifact& artifact, const std::filesystem::path& dir);
DefenseArtifact load_defense(const std::filesystem::path& dir);

}  // namespace aslpar
