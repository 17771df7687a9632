#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aslpar/dataset.hpp"
#include "aslpar/model.hpp"
#include "aslpar/optim.hpp"

namespace aslpar {

/// Victim-model training settings.
struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  float lr = 2e-3F;
  std::size_t warmup_epochs = 5;
  float warmup_ratio = 0.01F;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  float momentum = 0.9F;
  float weight_decay = 1e-4F;
  float alpha = 0.5F;
  std::uint64_t seed = 0;

  void validate() const;
  LrSchedule schedule() const { return {lr, epochs, warmup_epochs, warmup_ratio}; }
  nlohmann::json to_json() const;
  /// Unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  std::size_t epoch = 0;
  float lr = 0.0F;
  double loss = 0.0;
  double cse = 0.0;
  double gl = 0.0;
};

/// `epoch,lr,loss,cse,gl` rows.
std::string curve_csv(const std::vector<EpochRecord>& curve);

/// Loss and gradients of a single sample.
struct SampleGrad {
  double loss = 0.0;
  double cse = 0.0;
  double gl = 0.0;
  std::vector<Tensor> grads;
};

/// Batch-mean loss and gradients.
struct BatchGrad {
  double loss = 0.0;
  double cse = 0.0;
  double gl = 0.0;
  std::vector<Tensor> grads;
};

/// Evaluates fn for every index (possibly in parallel) and averages the
/// results, always summing in the order of `indices`.
BatchGrad batch_mean(std::span<const std::size_t> indices, const std::function<SampleGrad(std::size_t)>& fn);

/// Epoch-seeded permutation of 0..n-1.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

struct TrainResult {
  Model model;
  std::vector<EpochRecord> curve;
};

/// Trains on true labels with cse + alpha * gl; class weights come from
/// the training labels. Zero epochs returns the initialisation.
TrainResult train_model(const Dataset& train, const ModelConfig& config, const TrainConfig& cfg);

/// Per-image input transform applied before the forward pass.
using ImageTransform = std::function<Tensor(const Tensor&)>;

/// Attribute probabilities [M x N] for every image.
Tensor predict_dataset(const Model& model, std::span<const Tensor> images, const ImageTransform& transform = {},
                       const Tensor* prompt_offsets = nullptr);

}  // namespace aslpar
