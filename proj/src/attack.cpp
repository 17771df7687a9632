#include "aslpar/attack.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "aslpar/labels.hpp"
#include "aslpar/ops.hpp"
#include "aslpar/rng.hpp"
#include "aslpar/tensor_io.hpp"

namespace aslpar {
namespace {

double parse_number(const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw std::invalid_argument("not a number: '" + text + "'");
  return v;
}

float sign_of(float v) { return v > 0.0F ? 1.0F : (v < 0.0F ? -1.0F : 0.0F); }

// Rounding in x0 + delta can leave |v - x0| one ulp above epsilon; step v
// back until the float difference itself is within budget.
float within_budget(float x0, float v, float epsilon) {
  while (v - x0 > epsilon) v = std::nextafter(v, x0);
  while (x0 - v > epsilon) v = std::nextafter(v, x0);
  return std::clamp(v, 0.0F, 1.0F);
}

// x0 + clip_eps(x + step * sign(dir) - x0), then clamped to the image range.
Tensor project_step(const Tensor& x0, const Tensor& x, const Tensor& dir, float step, float epsilon) {
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float moved = x[i] + step * sign_of(dir[i]);
    const float delta = std::clamp(moved - x0[i], -epsilon, epsilon);
    out[i] = within_budget(x0[i], x0[i] + delta, epsilon);
  }
  return out;
}

Tensor label_row(const LabelVector& y) {
  Tensor t(Shape{1, y.size()});
  for (std::size_t j = 0; j < y.size(); ++j) t[j] = y[j] ? 1.0F : 0.0F;
  return t;
}

nlohmann::json trace_json(const std::vector<EpochRecord>& trace) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : trace) {
    out.push_back({{"epoch", r.epoch}, {"lr", r.lr}, {"loss", r.loss}, {"cse", r.cse}, {"gl", r.gl}});
  }
  return out;
}

}  // namespace

float parse_epsilon(const std::string& text) {
  double v = 0.0;
  const auto slash = text.find('/');
  try {
    if (slash == std::string::npos) {
      v = parse_number(text);
    } else {
      const double den = parse_number(text.substr(slash + 1));
      if (den == 0.0) throw std::invalid_argument("zero denominator");
      v = parse_number(text.substr(0, slash)) / den;
    }
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument("invalid epsilon '" + text + "': " + e.what());
  }
  if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("epsilon must be positive: '" + text + "'");
  return static_cast<float>(v);
}

NoiseMode parse_noise_mode(const std::string& name) {
  if (name == "global") return NoiseMode::kGlobal;
  if (name == "patch") return NoiseMode::kPatch;
  throw std::invalid_argument("unknown noise mode '" + name + "' (expected global or patch)");
}

const char* noise_mode_name(NoiseMode mode) { return mode == NoiseMode::kGlobal ? "global" : "patch"; }

void Perturbation::validate() const {
  if (image_shape.rank() != 3) throw DimensionError("perturbation: image shape must be [C x H x W], got " + image_shape.str());
  if (tensor.rank() != 3) throw DimensionError("perturbation: noise must be rank 3, got " + tensor.shape().str());
  if (mode == NoiseMode::kGlobal) {
    if (!(tensor.shape() == image_shape)) {
      throw DimensionError("perturbation: global noise " + tensor.shape().str() + " does not match images " +
                           image_shape.str());
    }
    return;
  }
  if (tensor.dim(0) != image_shape[0] || row0 + tensor.dim(1) > image_shape[1] || col0 + tensor.dim(2) > image_shape[2]) {
    throw DimensionError("perturbation: patch " + tensor.shape().str() + " at (" + std::to_string(row0) + ", " +
                         std::to_string(col0) + ") does not fit images " + image_shape.str());
  }
}

Perturbation Perturbation::zeros(NoiseMode mode, const Shape& image_shape, float epsilon) {
  Perturbation p;
  p.mode = mode;
  p.image_shape = image_shape;
  p.epsilon = epsilon;
  if (mode == NoiseMode::kGlobal) {
    p.tensor = Tensor(image_shape);
  } else {
    const PatchPlacement at = centered_patch(image_shape);
    p.tensor = Tensor(Shape{image_shape[0], at.height, at.width});
    p.row0 = at.row0;
    p.col0 = at.col0;
  }
  p.validate();
  return p;
}

PatchPlacement centered_patch(const Shape& image_shape, std::size_t side) {
  if (image_shape.rank() != 3) throw DimensionError("centered_patch: image shape must be [C x H x W], got " + image_shape.str());
  if (side == 0) throw std::invalid_argument("centered_patch: side must be positive");
  PatchPlacement p;
  p.height = std::min(side, image_shape[1]);
  p.width = std::min(side, image_shape[2]);
  p.row0 = (image_shape[1] - p.height) / 2;
  p.col0 = (image_shape[2] - p.width) / 2;
  return p;
}

Tensor apply_noise(const Tensor& image, const Perturbation& noise) {
  noise.validate();
  if (!(image.shape() == noise.image_shape)) {
    throw DimensionError("apply_noise: image " + image.shape().str() + " does not match noise target " +
                         noise.image_shape.str());
  }
  Tensor out = image;
  if (noise.mode == NoiseMode::kGlobal) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = image[i] + noise.tensor[i];
  } else {
    const std::size_t c = noise.tensor.dim(0), ph = noise.tensor.dim(1), pw = noise.tensor.dim(2);
    const std::size_t h = image.dim(1), w = image.dim(2);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t r = 0; r < ph; ++r) {
        for (std::size_t col = 0; col < pw; ++col) {
          const std::size_t at = (ch * h + noise.row0 + r) * w + noise.col0 + col;
          out[at] = image[at] + noise.tensor[(ch * ph + r) * pw + col];
        }
      }
    }
  }
  for (float& v : out.data()) v = std::clamp(v, 0.0F, 1.0F);
  return out;
}

Var apply_noise(Var image, Var noise, const Perturbation& layout) {
  Var sum = layout.mode == NoiseMode::kGlobal ? ops::add(image, noise)
                                              : ops::add_window(image, noise, layout.row0, layout.col0);
  return ops::clamp(sum, 0.0F, 1.0F);
}

void clip_noise(Tensor& noise, float epsilon) {
  for (float& v : noise.data()) v = std::min(std::max(v, -epsilon), epsilon);
}

void AttackConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("attack config: batch_size must be positive");
  if (!(lr >= 0.0F)) throw std::invalid_argument("attack config: lr must be non-negative");
  if (!(alpha >= 0.0F)) throw std::invalid_argument("attack config: alpha must be non-negative");
  if (!(epsilon > 0.0F)) throw std::invalid_argument("attack config: epsilon must be positive");
  if (!(warmup_ratio >= 0.0F && warmup_ratio <= 1.0F)) throw std::invalid_argument("attack config: warmup_ratio must be in [0, 1]");
  if (patch_side == 0) throw std::invalid_argument("attack config: patch_side must be positive");
  if (patch_row0.has_value() != patch_col0.has_value()) {
    throw std::invalid_argument("attack config: patch_row0 and patch_col0 must be given together");
  }
}

nlohmann::json AttackConfig::to_json() const {
  nlohmann::json j = {{"epochs", epochs},
                      {"batch_size", batch_size},
                      {"lr", lr},
                      {"warmup_epochs", warmup_epochs},
                      {"warmup_ratio", warmup_ratio},
                      {"alpha", alpha},
                      {"epsilon", epsilon},
                      {"mode", noise_mode_name(mode)},
                      {"patch_side", patch_side},
                      {"seed", seed},
                      {"use_semantic", use_semantic},
                      {"use_label_perturbation", use_label_perturbation},
                      {"use_linf_constraint", use_linf_constraint}};
  if (patch_row0) {
    j["patch_row0"] = *patch_row0;
    j["patch_col0"] = *patch_col0;
  }
  return j;
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
  AttackConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs") c.epochs = value.get<std::size_t>();
    else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
    else if (key == "lr") c.lr = value.get<float>();
    else if (key == "warmup_epochs") c.warmup_epochs = value.get<std::size_t>();
    else if (key == "warmup_ratio") c.warmup_ratio = value.get<float>();
    else if (key == "alpha") c.alpha = value.get<float>();
    else if (key == "epsilon") c.epsilon = value.is_string() ? parse_epsilon(value.get<std::string>()) : value.get<float>();
    else if (key == "mode") c.mode = parse_noise_mode(value.get<std::string>());
    else if (key == "patch_side") c.patch_side = value.get<std::size_t>();
    else if (key == "patch_row0") c.patch_row0 = value.get<std::size_t>();
    else if (key == "patch_col0") c.patch_col0 = value.get<std::size_t>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "use_semantic") c.use_semantic = value.get<bool>();
    else if (key == "use_label_perturbation") c.use_label_perturbation = value.get<bool>();
    else if (key == "use_linf_constraint") c.use_linf_constraint = value.get<bool>();
    else throw std::invalid_argument("attack config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

AttackResult train_universal(const Model& model, const Dataset& data, const AttackConfig& cfg,
                             const EpochObserver& observer) {
  cfg.validate();
  model.config.validate();
  data.validate();
  if (data.size() == 0) throw std::invalid_argument("train_universal: empty dataset");
  if (!(data.images.front().shape() == model.config.image_shape())) {
    throw DimensionError("train_universal: images " + data.images.front().shape().str() + " do not match model input " +
                         model.config.image_shape().str());
  }
  if (!(data.schema == model.schema)) throw std::invalid_argument("train_universal: dataset schema differs from model schema");

  Perturbation eta;
  eta.mode = cfg.mode;
  eta.image_shape = model.config.image_shape();
  eta.epsilon = cfg.epsilon;
  if (cfg.mode == NoiseMode::kGlobal) {
    eta.tensor = Tensor(eta.image_shape);
  } else {
    const PatchPlacement at = centered_patch(eta.image_shape, cfg.patch_side);
    eta.tensor = Tensor(Shape{eta.image_shape[0], at.height, at.width});
    eta.row0 = cfg.patch_row0.value_or(at.row0);
    eta.col0 = cfg.patch_col0.value_or(at.col0);
  }
  eta.validate();
  {
    Rng rng = make_rng(derive_seed(cfg.seed, Stream::kNoise));
    std::uniform_real_distribution<float> init(-cfg.epsilon / 10.0F, cfg.epsilon / 10.0F);
    for (float& v : eta.tensor.data()) v = init(rng);
  }

  const ClassWeights weights = compute_weights(data.labels);
  const std::uint64_t label_seed = derive_seed(cfg.seed, Stream::kLabels);
  std::vector<Tensor> targets;
  targets.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    targets.push_back(label_row(cfg.use_label_perturbation
                                    ? perturb_labels(data.labels[i], data.schema, derive_seed(label_seed, i)).bits
                                    : data.labels[i]));
  }
  // Descend toward shifted labels, or ascend away from the true ones.
  const float direction = cfg.use_label_perturbation ? -1.0F : 1.0F;
  const std::size_t n = model.config.attribute_count;

  auto sample_grad = [&](std::size_t i) {
    Graph g;
    ModelVars vars = bind_params(g, model.params, false);
    Var noise = g.parameter(eta.tensor);
    Var noisy = apply_noise(g.input(data.images[i]), noise, eta);
    ForwardVars fv = forward(noisy, model, vars);
    Var cse = weighted_cse(ops::reshape(fv.probs, Shape{1, n}), targets[i], weights);
    Var gl = gl_loss(ops::reshape(fv.gl_scores, Shape{1, n}), targets[i]);
    Var loss = cfg.use_semantic ? total_loss(cse, gl, cfg.alpha) : cse;
    Gradients grads = g.backward(loss);
    SampleGrad s{loss.value().item(), cse.value().item(), gl.value().item(), {}};
    s.grads.push_back(std::move(grads.at(noise.id)));
    return s;
  };

  AttackResult result;
  const LrSchedule schedule = cfg.schedule();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const float lr = schedule.at(epoch);
    const auto order = epoch_order(data.size(), cfg.seed, epoch);
    EpochRecord rec{epoch + 1, lr, 0.0, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      BatchGrad bg = batch_mean(std::span<const std::size_t>(order.data() + start, count), sample_grad);
      if (!std::isfinite(bg.loss)) {
        throw std::runtime_error("train_universal: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                 ", batch starting at " + std::to_string(start));
      }
      const Tensor& grad = bg.grads.front();
      for (std::size_t i = 0; i < eta.tensor.size(); ++i) eta.tensor[i] += direction * lr * grad[i];
      if (cfg.use_linf_constraint) clip_noise(eta.tensor, cfg.epsilon);
      rec.loss += bg.loss * static_cast<double>(count);
      rec.cse += bg.cse * static_cast<double>(count);
      rec.gl += bg.gl * static_cast<double>(count);
    }
    const double m = static_cast<double>(data.size());
    rec.loss /= m;
    rec.cse /= m;
    rec.gl /= m;
    result.provenance.trace.push_back(rec);
    if (observer) observer(epoch + 1, eta);
  }

  result.provenance.config = cfg.to_json();
  result.provenance.max_abs = eta.max_abs();
  result.provenance.seed = cfg.seed;
  result.noise = std::move(eta);
  return result;
}

std::filesystem::path noise_sidecar(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  return p.replace_extension(".json");
}

void save_noise(const Perturbation& noise, const nlohmann::json& meta, const std::filesystem::path& path) {
  noise.validate();
  nlohmann::json doc = meta;
  std::vector<std::size_t> dims(noise.image_shape.dims().begin(), noise.image_shape.dims().end());
  doc["mode"] = noise_mode_name(noise.mode);
  doc["epsilon"] = noise.epsilon;
  doc["image_shape"] = dims;
  doc["placement"] = {{"row0", noise.row0},
                      {"col0", noise.col0},
                      {"height", noise.tensor.dim(1)},
                      {"width", noise.tensor.dim(2)}};
  doc["max_abs"] = noise.max_abs();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_tensor(noise.tensor, path);
  doc["noise_hash"] = hex64(hash_file(path));
  write_text_file(noise_sidecar(path), doc.dump(2) + "\n");
}

void save_noise(const AttackResult& result, const std::filesystem::path& path) {
  const auto& cfg = result.provenance.config;
  const std::string dumped = cfg.dump();
  nlohmann::json meta = {
      {"seed", result.provenance.seed},
      {"config", cfg},
      {"config_hash", hex64(fnv1a64(reinterpret_cast<const std::uint8_t*>(dumped.data()), dumped.size()))},
      {"loss_trace", trace_json(result.provenance.trace)}};
  save_noise(result.noise, meta, path);
}

Perturbation load_noise(const std::filesystem::path& path) {
  Perturbation p;
  p.tensor = load_tensor(path);
  const auto side = noise_sidecar(path);
  if (!std::filesystem::exists(side)) throw std::runtime_error(path.string() + ": missing sidecar " + side.string());
  try {
    const auto doc = nlohmann::json::parse(read_text_file(side));
    p.mode = parse_noise_mode(doc.at("mode").get<std::string>());
    p.epsilon = doc.at("epsilon").get<float>();
    const auto dims = doc.at("image_shape").get<std::vector<std::size_t>>();
    if (dims.size() != 3) throw DimensionError("image_shape must have three entries");
    p.image_shape = Shape{dims[0], dims[1], dims[2]};
    p.row0 = doc.at("placement").at("row0").get<std::size_t>();
    p.col0 = doc.at("placement").at("col0").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(side.string() + ": " + e.what());
  }
  p.validate();
  return p;
}

void check_noise_compatible(const Perturbation& noise, const ModelConfig& config) {
  noise.validate();
  if (!(noise.image_shape == config.image_shape())) {
    throw DimensionError("noise targets images " + noise.image_shape.str() + " but the model expects " +
                         config.image_shape().str());
  }
}

Tensor input_gradient(const Model& model, const Tensor& image, const LabelVector& y, const ClassWeights& weights) {
  const std::size_t n = model.config.attribute_count;
  if (y.size() != n) throw DimensionError("input_gradient: label length " + std::to_string(y.size()) + " != " + std::to_string(n));
  Graph g;
  ModelVars vars = bind_params(g, model.params, false);
  Var x = g.parameter(image);
  ForwardVars fv = forward(x, model, vars);
  Var loss = weighted_cse(ops::reshape(fv.probs, Shape{1, n}), label_row(y), weights);
  return std::move(g.backward(loss).at(x.id));
}

Tensor fgsm(const Model& model, const Tensor& image, const LabelVector& y, const ClassWeights& weights,
            float epsilon) {
  if (!(epsilon > 0.0F)) throw std::invalid_argument("fgsm: epsilon must be positive");
  return project_step(image, image, input_gradient(model, image, y, weights), epsilon, epsilon);
}

Tensor ifgsm(const Model& model, const Tensor& image, const LabelVector& y, const ClassWeights& weights,
             const BaselineConfig& cfg) {
  if (!(cfg.epsilon > 0.0F && cfg.step > 0.0F)) throw std::invalid_argument("ifgsm: epsilon and step must be positive");
  Tensor x = image;
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    x = project_step(image, x, input_gradient(model, x, y, weights), cfg.step, cfg.epsilon);
  }
  return x;
}

Tensor mifgsm(const Model& model, const Tensor& image, const LabelVector& y, const ClassWeights& weights,
              const BaselineConfig& cfg) {
  if (!(cfg.epsilon > 0.0F && cfg.step > 0.0F)) throw std::invalid_argument("mifgsm: epsilon and step must be positive");
  Tensor x = image;
  Tensor velocity(image.shape());
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const Tensor grad = input_gradient(model, x, y, weights);
    double l1 = 0.0;
    for (float v : grad.data()) l1 += std::fabs(v);
    const float inv = l1 > 0.0 ? static_cast<float>(1.0 / l1) : 0.0F;
    for (std::size_t i = 0; i < velocity.size(); ++i) velocity[i] = cfg.momentum * velocity[i] + grad[i] * inv;
    x = project_step(image, x, velocity, cfg.step, cfg.epsilon);
  }
  return x;
}

Tensor pgd(const Model& model, const Tensor& image, const LabelVector& y, const ClassWeights& weights,
           const BaselineConfig& cfg) {
  if (!(cfg.epsilon > 0.0F && cfg.step > 0.0F)) throw std::invalid_argument("pgd: epsilon and step must be positive");
  Tensor x = image;
  if (cfg.random_start) {
    Rng rng = make_rng(derive_seed(cfg.seed, Stream::kRandomStart));
    std::uniform_real_distribution<float> start(-cfg.epsilon, cfg.epsilon);
    for (float& v : x.data()) v = std::clamp(v + start(rng), 0.0F, 1.0F);
  }
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    x = project_step(image, x, input_gradient(model, x, y, weights), cfg.step, cfg.epsilon);
  }
  return x;
}

}  // namespace aslpar
