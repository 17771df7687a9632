#include "aslpar/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace aslpar {

float LrSchedule::at(std::size_t epoch) const {
  if (epoch < warmup_epochs) {
    const double t = static_cast<double>(epoch) / static_cast<double>(warmup_epochs);
    return static_cast<float>(base_lr * (warmup_ratio + (1.0 - warmup_ratio) * t));
  }
  if (epochs <= warmup_epochs) return base_lr;
  const double t = static_cast<double>(epoch - warmup_epochs) / static_cast<double>(epochs - warmup_epochs);
  return static_cast<float>(base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected sgd or adam)");
}

const char* optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

double clip_grad_norm(std::span<Tensor> grads, float max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads) {
    for (float v : g.data()) sq += static_cast<double>(v) * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0F && norm > max_norm) {
    const auto scale = static_cast<float>(max_norm / norm);
    for (Tensor& g : grads) {
      for (float& v : g.data()) v *= scale;
    }
  }
  return norm;
}

void Optimizer::step(std::span<Tensor* const> params, std::span<const Tensor> grads, float lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("optimizer: parameter/gradient count mismatch");
  if (first_.empty()) {
    for (const Tensor* p : params) {
      first_.emplace_back(p->shape());
      second_.emplace_back(p->shape());
    }
  }
  if (first_.size() != params.size()) throw std::invalid_argument("optimizer: parameter list changed between steps");
  ++steps_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(config_.beta1), static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(config_.beta2), static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    require_same_shape(p, grads[k], "optimizer");
    auto pv = p.data();
    auto gv = grads[k].data();
    auto m = first_[k].data();
    auto v = second_[k].data();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const float g = gv[i] + config_.weight_decay * pv[i];
      if (config_.kind == OptimizerKind::kSgd) {
        m[i] = config_.momentum * m[i] + g;
        pv[i] -= lr * m[i];
      } else {
        m[i] = config_.beta1 * m[i] + (1.0F - config_.beta1) * g;
        v[i] = config_.beta2 * v[i] + (1.0F - config_.beta2) * g * g;
        const double mhat = m[i] / bc1, vhat = v[i] / bc2;
        pv[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + config_.adam_eps));
      }
    }
  }
}

}  // namespace aslpar
