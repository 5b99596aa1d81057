#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "handadapt/autodiff/tensor.hpp"

namespace handadapt {

enum class OpKind {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kMatmul,
  kConv2d,
  kUpsample2x,
  kMaxPool2x2,
  kRelu,
  kSigmoid,
  kExp,
  kLog,
  kSum,
  kMean,
  kConcatChannels,
  kSpatialSoftmax,
  kStopGradient,
  kReshape,
  kSmoothL1,
  kBceWithLogits,
};

class Graph;

// Handle to a node in a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Tape of primitive applications in the order they were recorded.
///
/// Recording order is a topological order, so backward() is a single
/// reverse sweep. Nodes that do not depend on any gradient-tracking leaf
/// skip the backward sweep entirely, as do nodes downstream of
/// stop_gradient.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    OpKind kind = OpKind::kConstant;
    std::vector<std::size_t> inputs;
    Tensor value;
    std::vector<double> grad;  // empty means "no gradient reached this node"
    bool needs_grad = false;
    Tensor* leaf = nullptr;    // parameter that receives the accumulated gradient
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Registers a parameter. Its gradient lands in t.grad() after backward()
  // when t.requires_grad() is set.
  Var leaf(Tensor& t) {
    Node n;
    n.kind = OpKind::kLeaf;
    n.value = Tensor(t.shape(), t.storage());
    n.needs_grad = t.requires_grad();
    n.leaf = t.requires_grad() ? &t : nullptr;
    return push(std::move(n));
  }

  Var constant(Tensor t) {
    Node n;
    n.kind = OpKind::kConstant;
    n.value = std::move(t);
    return push(std::move(n));
  }

  // Used by primitives. needs_grad is derived from the inputs.
  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
    Node n;
    n.kind = kind;
    n.value = std::move(value);
    for (std::size_t i : inputs) n.needs_grad = n.needs_grad || nodes_.at(i).needs_grad;
    n.inputs = std::move(inputs);
    if (n.needs_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  // Same as record() but never propagates gradient.
  Var record_detached(OpKind kind, std::vector<std::size_t> inputs, Tensor value) {
    Node n;
    n.kind = kind;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    return push(std::move(n));
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const std::vector<double>& upstream(std::size_t id) const { return nodes_[id].grad; }

  // Gradient buffer of an input node, allocated lazily. Returns nullptr when
  // that input does not take part in differentiation.
  std::vector<double>* grad_sink(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return nullptr;
    if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
    return &n.grad;
  }

  // d(loss)/d(node) after backward(); all zeros if nothing flowed there.
  std::vector<double> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return std::vector<double>(n.value.numel(), 0.0);
    return n.grad;
  }

  /// Reverse-mode sweep from a scalar. Leaf gradients are added to any
  /// gradient already stored on the parameter tensor.
  void backward(Var loss) {
    if (loss.graph != this) throw std::invalid_argument("backward: loss belongs to another graph");
    Node& root = nodes_.at(loss.id);
    if (root.value.numel() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + shape_str(root.value.shape()));
    }
    for (Node& n : nodes_) {
      n.grad.clear();
      // Every tracked leaf ends up with a buffer, zero when nothing reached it.
      if (n.leaf != nullptr) {
        auto& g = n.leaf->grad();
        if (!g || g->size() != n.value.numel()) g = std::vector<double>(n.value.numel(), 0.0);
      }
    }
    if (!root.needs_grad) return;
    root.grad.assign(1, 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.needs_grad) continue;
      if (n.leaf != nullptr) {
        auto& g = *n.leaf->grad();
        for (std::size_t j = 0; j < n.grad.size(); ++j) g[j] += n.grad[j];
      } else if (n.backward) {
        n.backward(*this, i);
      }
    }
  }

 private:
  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph->value(id); }

}  // namespace handadapt
