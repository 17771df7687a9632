#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aslpar/labels.hpp"
#include "aslpar/tensor.hpp"

namespace aslpar {

/// In-memory labelled image set. Images are [C x H x W] in [0, 1].
struct Dataset {
  AttributeSchema schema;
  std::vector<Tensor> images;
  std::vector<LabelVector> labels;

  std::size_t size() const { return images.size(); }
  /// Throws unless images share one shape and labels fit the schema.
  void validate() const;
};

/// Parameters of the synthetic pedestrian renderer.
struct SyntheticConfig {
  std::size_t train_count = 2000;
  std::size_t test_count = 500;
  std::size_t image_height = 48;
  std::size_t image_width = 24;
  std::uint64_t seed = 0;
  /// Standard deviation of per-pixel Gaussian noise.
  float noise_sigma = 0.05F;
  /// Colour offset separating attribute values.
  float contrast = 0.07F;

  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys are rejected.
  static SyntheticConfig from_json(const nlohmann::json& j);
};

struct SyntheticData {
  Dataset train;
  Dataset test;
};

/// Renders figures as stacked rectangles (hat band, torso, legs, shoes) on a
/// random background, using the default pedestrian schema. Deterministic in
/// cfg.seed; every sample draws from its own derived stream.
SyntheticData generate_synthetic(const SyntheticConfig& cfg);

/// Row ranges of the rendered body regions for the given image height.
struct BodyLayout {
  std::size_t head_begin, head_end, torso_begin, torso_end, legs_begin, legs_end, feet_begin, feet_end;
};
BodyLayout body_layout(std::size_t height);

/// Paths written by write_dataset.
struct DatasetFiles {
  std::filesystem::path schema;
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
};

/// Writes schema.json, train.json, test.json and one DTSR file per image.
DatasetFiles write_dataset(const SyntheticData& data, const std::filesystem::path& out_dir);
void write_manifest(const Dataset& data, const std::string& split, const std::filesystem::path& out_dir,
                    const std::string& schema_file = "schema.json");

/// Loads a manifest; all paths inside are relative to the manifest location.
/// Missing files and label-length mismatches raise errors naming the path.
Dataset load_manifest(const std::filesystem::path& manifest);

/// Where a patch-mode noise block sits on its canvas.
struct CanvasPlacement {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t row0 = 0;
  std::size_t col0 = 0;
};

/// Binary PPM (P6) of clamp(0.5 + amplification * noise, 0, 1), 8-bit with
/// round-half-up. With a placement the block is drawn onto a mid-grey canvas.
std::vector<std::uint8_t> encode_noise_ppm(const Tensor& noise, float amplification,
                                           const std::optional<CanvasPlacement>& placement = std::nullopt);
void export_noise_image(const Tensor& noise, float amplification, const std::filesystem::path& path,
                        const std::optional<CanvasPlacement>& placement = std::nullopt);

}  // namespace aslpar
