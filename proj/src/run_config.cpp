#include "aslpar/run_config.hpp"

#include <algorithm>
#include <stdexcept>

#include "aslpar/tensor_io.hpp"

namespace aslpar {
namespace {

// Copies the top-level seed into a section unless it has its own.
nlohmann::json with_seed(const nlohmann::json& section, const std::optional<std::uint64_t>& seed) {
  nlohmann::json out = section;
  if (seed && !out.contains("seed")) out["seed"] = *seed;
  return out;
}

RunPaths paths_from_json(const nlohmann::json& j) {
  RunPaths p;
  for (const auto& [key, value] : j.items()) {
    if (key == "train_manifest") p.train_manifest = value.get<std::string>();
    else if (key == "test_manifest") p.test_manifest = value.get<std::string>();
    else if (key == "model") p.model = value.get<std::string>();
    else if (key == "noise") p.noise = value.get<std::string>();
    else if (key == "defense") p.defense = value.get<std::string>();
    else throw std::invalid_argument("paths: unknown key '" + key + "'");
  }
  return p;
}

}  // namespace

void RunConfig::validate() const {
  data.validate();
  model.validate();
  train.validate();
  attack.validate();
  defense.validate();
  if (data.image_height != model.image_height || data.image_width != model.image_width) {
    throw std::invalid_argument("run config: data images " + std::to_string(data.image_height) + "x" +
                                std::to_string(data.image_width) + " differ from model input " +
                                std::to_string(model.image_height) + "x" + std::to_string(model.image_width));
  }
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json paths_json = nlohmann::json::object();
  auto put = [&](const char* key, const std::optional<std::string>& v) {
    if (v) paths_json[key] = *v;
  };
  put("train_manifest", paths.train_manifest);
  put("test_manifest", paths.test_manifest);
  put("model", paths.model);
  put("noise", paths.noise);
  put("defense", paths.defense);
  return {{"seed", seed},
          {"data", data.to_json()},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"attack", attack.to_json()},
          {"defense", defense.to_json()},
          {"paths", paths_json}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("run config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    static const char* known[] = {"seed", "data", "model", "train", "attack", "defense", "paths"};
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw std::invalid_argument("run config: unknown key '" + key + "'");
    }
  }
  RunConfig c;
  std::optional<std::uint64_t> seed;
  try {
    if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
    const nlohmann::json empty = nlohmann::json::object();
    c.seed = seed.value_or(0);
    c.data = SyntheticConfig::from_json(with_seed(j.value("data", empty), seed));
    c.model = ModelConfig::from_json(j.value("model", empty));
    c.train = TrainConfig::from_json(with_seed(j.value("train", empty), seed));
    c.attack = AttackConfig::from_json(with_seed(j.value("attack", empty), seed));
    c.defense = DefenseConfig::from_json(with_seed(j.value("defense", empty), seed));
    c.paths = paths_from_json(j.value("paths", empty));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  try {
    return from_json(doc);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void write_snapshot(const nlohmann::json& snapshot, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text_file(path, snapshot.dump(2) + "\n");
}

}  // namespace aslpar
