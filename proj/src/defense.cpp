#include "aslpar/defense.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "aslpar/losses.hpp"
#include "aslpar/ops.hpp"
#include "aslpar/parallel.hpp"
#include "aslpar/tensor_io.hpp"

namespace aslpar {

FilterParams FilterParams::identity(std::size_t channels, std::size_t kernel_size) {
  if (kernel_size % 2 == 0) throw std::invalid_argument("filter: kernel size must be odd");
  return {Tensor(Shape{channels, channels, kernel_size, kernel_size}), Tensor(Shape{channels}), true};
}

void FilterParams::validate(std::size_t channels) const {
  if (kernel.rank() != 4 || kernel.dim(0) != channels || kernel.dim(1) != channels || kernel.dim(2) != kernel.dim(3) ||
      kernel.dim(2) % 2 == 0) {
    throw DimensionError("filter: kernel must be [" + std::to_string(channels) + " x " + std::to_string(channels) +
                         " x k x k] with odd k, got " + kernel.shape().str());
  }
  if (!(bias.shape() == Shape{channels})) throw DimensionError("filter: bias must be [" + std::to_string(channels) + "], got " + bias.shape().str());
  if (!kernel.all_finite() || !bias.all_finite()) throw std::domain_error("filter: non-finite parameters");
}

PromptParams PromptParams::zeros(std::size_t attributes, std::size_t dim) { return {Tensor(Shape{attributes, dim})}; }

DefenseParams DefenseParams::identity(const ModelConfig& config) {
  DefenseParams p;
  p.filter = FilterParams::identity(config.channels, 3);
  p.prompt = PromptParams::zeros(config.attribute_count, config.embed_dim);
  return p;
}

void DefenseParams::validate(const ModelConfig& config) const {
  filter.validate(config.channels);
  if (!(prompt.offsets.shape() == Shape{config.attribute_count, config.embed_dim})) {
    throw DimensionError("prompt offsets " + prompt.offsets.shape().str() + " do not match model [" +
                         std::to_string(config.attribute_count) + " x " + std::to_string(config.embed_dim) + "]");
  }
  if (!prompt.offsets.all_finite()) throw std::domain_error("prompt offsets are not finite");
}

Var filter_image(Var x, Var kernel, Var bias, bool residual) {
  Var conv = ops::conv2d_same(x, kernel, bias);
  return ops::clamp(residual ? ops::add(x, conv) : conv, 0.0F, 1.0F);
}

Tensor filter_image(const Tensor& x, const FilterParams& f) {
  Graph g;
  return filter_image(g.input(x), g.input(f.kernel), g.input(f.bias), f.residual).value();
}

void DefenseConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("defense config: batch_size must be positive");
  if (!(lr >= 0.0F) || !(filter_lr >= 0.0F)) throw std::invalid_argument("defense config: learning rates must be non-negative");
  if (!(max_grad_norm >= 0.0F)) throw std::invalid_argument("defense config: max_grad_norm must be non-negative");
  if (!(alpha >= 0.0F)) throw std::invalid_argument("defense config: alpha must be non-negative");
  if (kernel_size % 2 == 0) throw std::invalid_argument("defense config: kernel_size must be odd");
  if (!(warmup_ratio >= 0.0F && warmup_ratio <= 1.0F)) throw std::invalid_argument("defense config: warmup_ratio must be in [0, 1]");
  if (!use_filter && !use_prompt) throw std::invalid_argument("defense config: enable the filter, the prompt, or both");
}

nlohmann::json DefenseConfig::to_json() const {
  return {{"epochs", epochs},           {"batch_size", batch_size},       {"lr", lr}, {"filter_lr", filter_lr},
          {"warmup_epochs", warmup_epochs}, {"warmup_ratio", warmup_ratio}, {"momentum", momentum},
          {"weight_decay", weight_decay}, {"max_grad_norm", max_grad_norm}, {"alpha", alpha},                 {"kernel_size", kernel_size},
          {"use_filter", use_filter},     {"use_prompt", use_prompt},       {"mix_clean", mix_clean},
          {"seed", seed}};
}

DefenseConfig DefenseConfig::from_json(const nlohmann::json& j) {
  DefenseConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs") c.epochs = value.get<std::size_t>();
    else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
    else if (key == "lr") c.lr = value.get<float>();
    else if (key == "filter_lr") c.filter_lr = value.get<float>();
    else if (key == "warmup_epochs") c.warmup_epochs = value.get<std::size_t>();
    else if (key == "warmup_ratio") c.warmup_ratio = value.get<float>();
    else if (key == "momentum") c.momentum = value.get<float>();
    else if (key == "weight_decay") c.weight_decay = value.get<float>();
    else if (key == "max_grad_norm") c.max_grad_norm = value.get<float>();
    else if (key == "alpha") c.alpha = value.get<float>();
    else if (key == "kernel_size") c.kernel_size = value.get<std::size_t>();
    else if (key == "use_filter") c.use_filter = value.get<bool>();
    else if (key == "use_prompt") c.use_prompt = value.get<bool>();
    else if (key == "mix_clean") c.mix_clean = value.get<bool>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else throw std::invalid_argument("defense config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

DefenseResult train_defense(const Model& model, const std::vector<Perturbation>& noises, const Dataset& data,
                            const DefenseConfig& cfg) {
  cfg.validate();
  data.validate();
  if (noises.empty()) throw std::invalid_argument("train_defense: no noise artifact given");
  if (data.size() == 0) throw std::invalid_argument("train_defense: empty dataset");
  for (const auto& n : noises) check_noise_compatible(n, model.config);
  if (!(data.schema == model.schema)) throw std::invalid_argument("train_defense: dataset schema differs from model schema");

  DefenseResult result;
  result.params.filter = FilterParams::identity(model.config.channels, cfg.kernel_size);
  result.params.prompt = PromptParams::zeros(model.config.attribute_count, model.config.embed_dim);
  result.params.use_filter = cfg.use_filter;
  result.params.use_prompt = cfg.use_prompt;
  DefenseParams& p = result.params;

  const ClassWeights weights = compute_weights(data.labels);
  const Tensor targets = targets_matrix(data.labels);
  const std::size_t n = model.config.attribute_count;

  std::vector<Tensor*> filter_slots, prompt_slots;
  if (cfg.use_filter) filter_slots = {&p.filter.kernel, &p.filter.bias};
  if (cfg.use_prompt) prompt_slots = {&p.prompt.offsets};

  // Training inputs do not change during training.
  std::vector<Tensor> noisy(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    if (cfg.mix_clean && i % 2 == 1) {
      noisy[i] = data.images[i];
    } else {
      noisy[i] = apply_noise(data.images[i], noises[(cfg.mix_clean ? i / 2 : i) % noises.size()]);
    }
  });

  auto sample_grad = [&](std::size_t i) {
    Graph g;
    ModelVars vars = bind_params(g, model.params, false);
    Var x = g.input(noisy[i]);
    std::vector<Var> marked;
    if (cfg.use_filter) {
      Var kernel = g.parameter(p.filter.kernel);
      Var bias = g.parameter(p.filter.bias);
      marked = {kernel, bias};
      x = filter_image(x, kernel, bias, p.filter.residual);
    }
    std::optional<Var> prompt;
    if (cfg.use_prompt) {
      prompt = g.parameter(p.prompt.offsets);
      marked.push_back(*prompt);
    }
    ForwardVars fv = forward(x, model, vars, prompt);
    Tensor y(Shape{1, n});
    std::copy_n(targets.ptr() + i * n, n, y.ptr());
    Var cse = weighted_cse(ops::reshape(fv.probs, Shape{1, n}), y, weights);
    Var gl = gl_loss(ops::reshape(fv.gl_scores, Shape{1, n}), y);
    Var loss = total_loss(cse, gl, cfg.alpha);
    Gradients grads = g.backward(loss);
    SampleGrad s{loss.value().item(), cse.value().item(), gl.value().item(), {}};
    for (Var v : marked) s.grads.push_back(std::move(grads.at(v.id)));
    return s;
  };

  Optimizer filter_opt(OptimizerConfig{OptimizerKind::kSgd, cfg.momentum, cfg.weight_decay});
  Optimizer prompt_opt(OptimizerConfig{OptimizerKind::kSgd, cfg.momentum, cfg.weight_decay});
  const LrSchedule schedule = cfg.schedule();
  const LrSchedule filter_schedule{cfg.filter_lr, cfg.epochs, cfg.warmup_epochs, cfg.warmup_ratio};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const float lr = schedule.at(epoch);
    const float filter_lr = filter_schedule.at(epoch);
    const auto order = epoch_order(data.size(), cfg.seed, epoch);
    EpochRecord rec{epoch + 1, lr, 0.0, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      BatchGrad bg = batch_mean(std::span<const std::size_t>(order.data() + start, count), sample_grad);
      if (!std::isfinite(bg.loss)) {
        throw std::runtime_error("train_defense: non-finite loss at epoch " + std::to_string(epoch + 1));
      }
      const std::size_t nf = filter_slots.size();
      // The filter gradient can be large enough that a single momentum step
      // wrecks the image; cap each group on its own.
      clip_grad_norm(std::span<Tensor>(bg.grads.data(), nf), cfg.max_grad_norm);
      clip_grad_norm(std::span<Tensor>(bg.grads.data() + nf, bg.grads.size() - nf), cfg.max_grad_norm);
      if (nf > 0) {
        filter_opt.step(filter_slots, std::span<const Tensor>(bg.grads.data(), nf), filter_lr);
      }
      if (!prompt_slots.empty()) prompt_opt.step(prompt_slots, std::span<const Tensor>(bg.grads.data() + nf, 1), lr);
      rec.loss += bg.loss * static_cast<double>(count);
      rec.cse += bg.cse * static_cast<double>(count);
      rec.gl += bg.gl * static_cast<double>(count);
    }
    const double m = static_cast<double>(data.size());
    rec.loss /= m;
    rec.cse /= m;
    rec.gl /= m;
    result.curve.push_back(rec);
  }
  return result;
}

ForwardOutput defended_forward(const Model& model, const Tensor& image, const Perturbation* noise,
                               const DefenseParams* defense) {
  Tensor x = noise != nullptr ? apply_noise(image, *noise) : image;
  if (defense == nullptr) return infer(model, x);
  defense->validate(model.config);
  if (defense->use_filter) x = filter_image(x, defense->filter);
  return infer(model, x, defense->use_prompt ? &defense->prompt.offsets : nullptr);
}

Tensor predict_defended(const Model& model, std::span<const Tensor> images, const Perturbation* noise,
                        const DefenseParams* defense) {
  if (noise != nullptr) check_noise_compatible(*noise, model.config);
  if (defense != nullptr) defense->validate(model.config);
  const std::size_t n = model.config.attribute_count;
  Tensor out(Shape{images.size(), n});
  parallel_for(images.size(), [&](std::size_t i) {
    const ForwardOutput fo = defended_forward(model, images[i], noise, defense);
    std::copy_n(fo.probs.ptr(), n, out.ptr() + i * n);
  });
  return out;
}

void save_defense(const DefenseArtifact& artifact, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const DefenseParams& p = artifact.params;
  save_tensor(p.filter.kernel, dir / "filter.kernel.dtsr");
  save_tensor(p.filter.bias, dir / "filter.bias.dtsr");
  save_tensor(p.prompt.offsets, dir / "prompt.offsets.dtsr");
  nlohmann::json doc = {{"use_filter", p.use_filter},
                        {"use_prompt", p.use_prompt},
                        {"residual", p.filter.residual},
                        {"noise_hash", artifact.noise_hash},
                        {"config", artifact.config}};
  write_text_file(dir / "defense.json", doc.dump(2) + "\n");
}

DefenseArtifact load_defense(const std::filesystem::path& dir) {
  const auto meta = dir / "defense.json";
  if (!std::filesystem::exists(meta)) throw std::runtime_error(dir.string() + ": missing defense.json");
  DefenseArtifact a;
  try {
    const auto doc = nlohmann::json::parse(read_text_file(meta));
    a.params.use_filter = doc.at("use_filter").get<bool>();
    a.params.use_prompt = doc.at("use_prompt").get<bool>();
    a.params.filter.residual = doc.at("residual").get<bool>();
    a.noise_hash = doc.at("noise_hash").get<std::string>();
    a.config = doc.value("config", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(meta.string() + ": " + e.what());
  }
  a.params.filter.kernel = load_tensor(dir / "filter.kernel.dtsr");
  a.params.filter.bias = load_tensor(dir / "filter.bias.dtsr");
  a.params.prompt.offsets = load_tensor(dir / "prompt.offsets.dtsr");
  return a;
}

}  // namespace aslpar
