#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "aslpar/tensor.hpp"

namespace aslpar {

/// Per-epoch learning rate: linear warmup from warmup_ratio * base_lr, then
/// cosine decay to zero over the remaining epochs.
struct LrSchedule {
  float base_lr = 8e-3F;
  std::size_t epochs = 40;
  std::size_t warmup_epochs = 5;
  float warmup_ratio = 0.01F;

  float at(std::size_t epoch) const;
};

enum class OptimizerKind { kSgd, kAdam };

OptimizerKind parse_optimizer(const std::string& name);
const char* optimizer_name(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  float momentum = 0.9F;
  float weight_decay = 0.0F;
  float beta1 = 0.9F;
  float beta2 = 0.999F;
  float adam_eps = 1e-8F;
};

/// Rescales grads in place so their joint L2 norm is at most max_norm and
/// returns the norm before rescaling. max_norm <= 0 leaves them alone.
double clip_grad_norm(std::span<Tensor> grads, float max_norm);

/// Updates a fixed list of tensors in place. State buffers are created on
/// the first step and keyed by position.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, float lr);

 private:
  OptimizerConfig config_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::size_t steps_ = 0;
};

}  // namespace aslpar
