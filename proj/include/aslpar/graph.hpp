#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "aslpar/tensor.hpp"

namespace aslpar {

using NodeId = std::size_t;

enum class OpKind {
  kInput,
  kParameter,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAffine,
  kAddRowBias,
  kMatmul,
  kTranspose,
  kReshape,
  kSigmoid,
  kRelu,
  kSoftmax,
  kLayerNorm,
  kEmbedding,
  kConcatRows,
  kSliceRows,
  kSum,
  kMean,
  kSumLastAxis,
  kClamp,
  kConv2dSame,
  kAttention,
  kNormalizeRows,
  kRowDot,
  kPatchify,
  kAddWindow,
  kWeightedBce,
};

const char* op_name(OpKind op);

/// Everything a backward rule sees for one node.
struct BackwardContext {
  const Tensor& output;
  const Tensor& grad_output;
  std::span<const Tensor* const> inputs;
  /// One slot per input; nullptr when that input needs no gradient.
  std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

class Graph;

/// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Gradients keyed by marked node id.
using Gradients = std::map<NodeId, Tensor>;

/// Append-only tape. Nodes are recorded in execution order, so the node
/// sequence is always topologically sorted. A Graph is rebuilt for every
/// forward pass and is confined to one thread.
class Graph {
 public:
  Graph() { nodes_.reserve(256); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Constant leaf: never receives a gradient.
  Var input(Tensor value);
  /// Marked leaf: backward() reports its gradient.
  Var parameter(Tensor value);

  Var record(OpKind op, std::initializer_list<Var> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  OpKind op(NodeId id) const { return nodes_.at(id).op; }
  std::span<const NodeId> inputs(NodeId id) const { return nodes_.at(id).inputs; }
  bool needs_grad(NodeId id) const { return nodes_.at(id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse-mode sweep from a scalar node. Returns one gradient per marked
  /// node, shape-equal to its value; marked nodes the loss does not depend
  /// on get zeros. Contributions reaching a node through fan-out are summed
  /// in a fixed order (consumers visited by descending node id), so repeated
  /// calls are bit-identical.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    OpKind op;
    std::vector<NodeId> inputs;
    Tensor value;
    bool needs_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<NodeId> marked_;
};

}  // namespace aslpar
