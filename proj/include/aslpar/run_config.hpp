#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "aslpar/attack.hpp"
#include "aslpar/dataset.hpp"
#include "aslpar/defense.hpp"
#include "aslpar/model.hpp"
#include "aslpar/training.hpp"

namespace aslpar {

/// Optional file locations; command-line flags take precedence.
struct RunPaths {
  std::optional<std::string> train_manifest;
  std::optional<std::string> test_manifest;
  std::optional<std::string> model;
  std::optional<std::string> noise;
  std::optional<std::string> defense;
};

/// Everything one experiment needs. In JSON the sections are "seed",
/// "data", "model", "train", "attack", "defense" and "paths"; unknown keys
/// anywhere are rejected. A top-level seed is copied into every section that
/// does not set its own.
struct RunConfig {
  std::uint64_t seed = 0;
  SyntheticConfig data;
  ModelConfig model;
  TrainConfig train;
  AttackConfig attack;
  DefenseConfig defense;
  RunPaths paths;

  /// Validates every section.
  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

/// Writes `snapshot` (pretty-printed, with the seed that was used) to path.
void write_snapshot(const nlohmann::json& snapshot, const std::filesystem::path& path);

inline constexpr const char* kSnapshotName = "resolved_config.json";

}  // namespace aslpar
