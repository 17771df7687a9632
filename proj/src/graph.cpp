#include "aslpar/graph.hpp"

#include <stdexcept>
#include <string>

namespace aslpar {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kInput: return "input";
    case OpKind::kParameter: return "parameter";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAffine: return "affine";
    case OpKind::kAddRowBias: return "add_row_bias";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSumLastAxis: return "sum_last_axis";
    case OpKind::kClamp: return "clamp";
    case OpKind::kConv2dSame: return "conv2d_same";
    case OpKind::kAttention: return "attention";
    case OpKind::kNormalizeRows: return "normalize_rows";
    case OpKind::kRowDot: return "row_dot";
    case OpKind::kPatchify: return "patchify";
    case OpKind::kAddWindow: return "add_window";
    case OpKind::kWeightedBce: return "weighted_bce";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::input(Tensor value) {
  nodes_.push_back(Node{OpKind::kInput, {}, std::move(value), false, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Tensor value) {
  nodes_.push_back(Node{OpKind::kParameter, {}, std::move(value), true, nullptr});
  marked_.push_back(nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(OpKind op, std::initializer_list<Var> inputs, Tensor value, BackwardFn backward) {
  Node node{op, {}, std::move(value), false, nullptr};
  node.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.graph != this) throw std::logic_error(std::string(op_name(op)) + ": input from a different graph");
    node.inputs.push_back(v.id);
    node.needs_grad = node.needs_grad || nodes_[v.id].needs_grad;
  }
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Gradients Graph::backward(Var loss) const {
  if (loss.graph != this) throw std::logic_error("backward: loss from a different graph");
  const Tensor& loss_value = value(loss.id);
  if (loss_value.size() != 1) {
    throw DimensionError("backward: loss node must be scalar, got " + loss_value.shape().str());
  }

  std::vector<Tensor> grads(nodes_.size());
  grads[loss.id] = Tensor(loss_value.shape(), 1.0F);

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (NodeId id = loss.id + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!node.needs_grad || !node.backward || grads[id].empty()) continue;
    in_values.clear();
    in_grads.clear();
    for (NodeId in : node.inputs) {
      in_values.push_back(&nodes_[in].value);
      if (nodes_[in].needs_grad) {
        if (grads[in].empty()) grads[in] = Tensor(nodes_[in].value.shape());
        in_grads.push_back(&grads[in]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    node.backward(BackwardContext{node.value, grads[id], in_values, in_grads});
    // Intermediate gradients are not needed once propagated.
    if (node.op != OpKind::kParameter) grads[id] = Tensor();
  }

  Gradients out;
  for (NodeId id : marked_) {
    if (id > loss.id || grads[id].empty()) {
      out.emplace(id, Tensor(nodes_[id].value.shape()));
    } else {
      out.emplace(id, std::move(grads[id]));
    }
  }
  return out;
}

}  // namespace aslpar
