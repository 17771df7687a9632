#include "aslpar/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "aslpar/losses.hpp"
#include "aslpar/ops.hpp"
#include "aslpar/parallel.hpp"
#include "aslpar/rng.hpp"

namespace aslpar {

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
  if (!(lr >= 0.0F)) throw std::invalid_argument("train config: lr must be non-negative");
  if (!(alpha >= 0.0F)) throw std::invalid_argument("train config: alpha must be non-negative");
  if (!(warmup_ratio >= 0.0F && warmup_ratio <= 1.0F)) throw std::invalid_argument("train config: warmup_ratio must be in [0, 1]");
  if (!(weight_decay >= 0.0F)) throw std::invalid_argument("train config: weight_decay must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"warmup_epochs", warmup_epochs},
          {"warmup_ratio", warmup_ratio},
          {"optimizer", optimizer_name(optimizer)},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"alpha", alpha},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs") c.epochs = value.get<std::size_t>();
    else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
    else if (key == "lr") c.lr = value.get<float>();
    else if (key == "warmup_epochs") c.warmup_epochs = value.get<std::size_t>();
    else if (key == "warmup_ratio") c.warmup_ratio = value.get<float>();
    else if (key == "optimizer") c.optimizer = parse_optimizer(value.get<std::string>());
    else if (key == "momentum") c.momentum = value.get<float>();
    else if (key == "weight_decay") c.weight_decay = value.get<float>();
    else if (key == "alpha") c.alpha = value.get<float>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else throw std::invalid_argument("train config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

std::string curve_csv(const std::vector<EpochRecord>& curve) {
  std::string out = "epoch,lr,loss,cse,gl\n";
  char buf[160];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.8g,%.6f,%.6f,%.6f\n", r.epoch, static_cast<double>(r.lr), r.loss, r.cse, r.gl);
    out += buf;
  }
  return out;
}

BatchGrad batch_mean(std::span<const std::size_t> indices, const std::function<SampleGrad(std::size_t)>& fn) {
  if (indices.empty()) throw std::invalid_argument("batch_mean: empty batch");
  std::vector<SampleGrad> slots(indices.size());
  parallel_for(indices.size(), [&](std::size_t k) { slots[k] = fn(indices[k]); });

  BatchGrad out;
  out.grads = std::move(slots.front().grads);
  out.loss = slots.front().loss;
  out.cse = slots.front().cse;
  out.gl = slots.front().gl;
  for (std::size_t k = 1; k < slots.size(); ++k) {
    out.loss += slots[k].loss;
    out.cse += slots[k].cse;
    out.gl += slots[k].gl;
    if (slots[k].grads.size() != out.grads.size()) throw std::logic_error("batch_mean: gradient count differs");
    for (std::size_t t = 0; t < out.grads.size(); ++t) {
      auto acc = out.grads[t].data();
      auto add = slots[k].grads[t].data();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  out.loss *= inv;
  out.cse *= inv;
  out.gl *= inv;
  for (auto& g : out.grads) {
    for (float& v : g.data()) v = static_cast<float>(v * inv);
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(derive_seed(derive_seed(seed, Stream::kShuffle), epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

TrainResult train_model(const Dataset& train, const ModelConfig& config, const TrainConfig& cfg) {
  config.validate();
  cfg.validate();
  train.validate();
  if (train.size() == 0) throw std::invalid_argument("train_model: empty dataset");
  if (train.schema.size() != config.attribute_count) {
    throw DimensionError("train_model: schema has " + std::to_string(train.schema.size()) +
                         " attributes, config expects " + std::to_string(config.attribute_count));
  }

  TrainResult result;
  result.model = Model{config, train.schema, init_params(config, derive_seed(cfg.seed, Stream::kInit))};
  Model& model = result.model;
  const ClassWeights weights = compute_weights(train.labels);
  const Tensor targets = targets_matrix(train.labels);
  const std::size_t n = config.attribute_count;

  std::vector<Tensor*> slots;
  model.params.for_each([&](const std::string&, Tensor& t) { slots.push_back(&t); });
  Optimizer opt(OptimizerConfig{cfg.optimizer, cfg.momentum, cfg.weight_decay});
  const LrSchedule schedule = cfg.schedule();

  auto sample_grad = [&](std::size_t i) {
    Graph g;
    ModelVars vars = bind_params(g, model.params, true);
    ForwardVars fv = forward(g.input(train.images[i]), model, vars);
    Tensor y(Shape{1, n});
    std::copy_n(targets.ptr() + i * n, n, y.ptr());
    Var cse = weighted_cse(ops::reshape(fv.probs, Shape{1, n}), y, weights);
    Var gl = gl_loss(ops::reshape(fv.gl_scores, Shape{1, n}), y);
    Var loss = total_loss(cse, gl, cfg.alpha);
    Gradients grads = g.backward(loss);
    SampleGrad s{loss.value().item(), cse.value().item(), gl.value().item(), {}};
    for (NodeId id : vars.ids()) s.grads.push_back(std::move(grads.at(id)));
    return s;
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const float lr = schedule.at(epoch);
    const auto order = epoch_order(train.size(), cfg.seed, epoch);
    EpochRecord rec{epoch + 1, lr, 0.0, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, count);
      BatchGrad bg = batch_mean(batch, sample_grad);
      if (!std::isfinite(bg.loss)) {
        throw std::runtime_error("train_model: non-finite loss at epoch " + std::to_string(epoch + 1));
      }
      opt.step(slots, bg.grads, lr);
      rec.loss += bg.loss * static_cast<double>(count);
      rec.cse += bg.cse * static_cast<double>(count);
      rec.gl += bg.gl * static_cast<double>(count);
    }
    const double m = static_cast<double>(train.size());
    rec.loss /= m;
    rec.cse /= m;
    rec.gl /= m;
    result.curve.push_back(rec);
  }
  return result;
}

Tensor predict_dataset(const Model& model, std::span<const Tensor> images, const ImageTransform& transform,
                       const Tensor* prompt_offsets) {
  const std::size_t n = model.config.attribute_count;
  Tensor out(Shape{images.size(), n});
  parallel_for(images.size(), [&](std::size_t i) {
    const ForwardOutput fo = transform ? infer(model, transform(images[i]), prompt_offsets)
                                       : infer(model, images[i], prompt_offsets);
    std::copy_n(fo.probs.ptr(), n, out.ptr() + i * n);
  });
  return out;
}

}  // namespace aslpar
