#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aslpar/dataset.hpp"
#include "aslpar/graph.hpp"
#include "aslpar/losses.hpp"
#include "aslpar/model.hpp"
#include "aslpar/optim.hpp"
#include "aslpar/training.hpp"

namespace aslpar {

inline constexpr float kDefaultEpsilon = 10.0F / 255.0F;
inline constexpr std::size_t kPatchSide = 30;

/// Accepts a fraction such as "10/255" or a decimal such as "0.039".
float parse_epsilon(const std::string& text);

enum class NoiseMode { kGlobal, kPatch };

NoiseMode parse_noise_mode(const std::string& name);
const char* noise_mode_name(NoiseMode mode);

/// A universal perturbation. Global noise has the image shape; patch noise
/// is a [C x h x w] block added at (row0, col0).
struct Perturbation {
  NoiseMode mode = NoiseMode::kGlobal;
  Tensor tensor;
  Shape image_shape;
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  float epsilon = kDefaultEpsilon;

  /// Throws DimensionError when the block does not fit the image.
  void validate() const;
  float max_abs() const { return tensor.max_abs(); }
  static Perturbation zeros(NoiseMode mode, const Shape& image_shape, float epsilon = kDefaultEpsilon);
};

/// Patch block dims, kPatchSide clipped to the image, and its centred origin.
struct PatchPlacement {
  std::size_t height = 0, width = 0, row0 = 0, col0 = 0;
};
PatchPlacement centered_patch(const Shape& image_shape, std::size_t side = kPatchSide);

/// image + noise (on the placed window for patches), clamped to [0, 1].
Tensor apply_noise(const Tensor& image, const Perturbation& noise);
/// Graph version; `noise` carries the perturbation values, `layout` its placement.
Var apply_noise(Var image, Var noise, const Perturbation& layout);

/// Elementwise min(max(v, -eps), eps).
void clip_noise(Tensor& noise, float epsilon);

struct AttackConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  float lr = 8e-3F;
  std::size_t warmup_epochs = 5;
  float warmup_ratio = 0.01F;
  float alpha = kDefaultAlpha;
  float epsilon = kDefaultEpsilon;
  NoiseMode mode = NoiseMode::kGlobal;
  std::size_t patch_side = kPatchSide;
  std::optional<std::size_t> patch_row0;
  std::optional<std::size_t> patch_col0;
  std::uint64_t seed = 0;
  bool use_semantic = true;
  bool use_label_perturbation = true;
  bool use_linf_constraint = true;

  void validate() const;
  LrSchedule schedule() const { return {lr, epochs, warmup_epochs, warmup_ratio}; }
  nlohmann::json to_json() const;
  /// Unknown keys are rejected.
  static AttackConfig from_json(const nlohmann::json& j);
};

struct NoiseProvenance {
  nlohmann::json config;
  std::vector<EpochRecord> trace;
  float max_abs = 0.0F;
  std::uint64_t seed = 0;
};

struct AttackResult {
  Perturbation noise;
  NoiseProvenance provenance;
};

/// Called after every epoch with the 1-based epoch number and current noise.
using EpochObserver = std::function<void(std::size_t, const Perturbation&)>;

/// Trains one perturbation shared by every image against the frozen model.
/// With label perturbation the objective is descended toward the shifted
/// labels; without it, the true-label objective is ascended.
AttackResult train_universal(const Model& model, const Dataset& data, const AttackConfig& cfg,
                             const EpochObserver& observer = {});

/// Noise DTSR file plus a `.json` sidecar next to it.
void save_noise(const AttackResult& result, const std::filesystem::path& path);
void save_noise(const Perturbation& noise, const nlohmann::json& meta, const std::filesystem::path& path);
Perturbation load_noise(const std::filesystem::path& path);
std::filesystem::path noise_sidecar(const std::filesystem::path& path);

/// Throws DimensionError unless the noise fits images of the model.
void check_noise_compatible(const Perturbation& noise, const ModelConfig& config);

/// Per-image gradient attacks on the true-label weighted cse.
struct BaselineConfig {
  float epsilon = kDefaultEpsilon;
  float step = 1.0F / 255.0F;
  std::size_t steps = 10;
  float momentum = 1.0F;
  bool random_start = true;
  std::uint64_t seed = 0;
};

Tensor fgsm(const Model& model, const Tensor& image, const LabelVector& y, const ClassWeights& weights,
            float epsilon);
Tensor ifgsm(const Model& model, const Tensor& image, const LabelVector& y, const ClassWeights& weights,
             const BaselineConfig& cfg);
Tensor mifgsm(const Model& model, const Tensor& image, const LabelVector& y, const ClassWeights& weights,
              const BaselineConfig& cfg);
Tensor pgd(const Model& model, const Tensor& image, const LabelVector& y, const ClassWeights& weights,
           const BaselineConfig& cfg);

/// Gradient of the weighted cse with respect to the input image.
Tensor input_gradient(const Model& model, const Tensor& image, const LabelVector& y, const ClassWeights& weights);

}  // namespace aslpar
