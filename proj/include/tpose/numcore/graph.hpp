#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tpose/numcore/params.hpp"
#include "tpose/numcore/tensor.hpp"

namespace tpose::nc {

class Graph;

/// Handle to a node on a Graph tape.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so reverse creation
/// order is a valid topological order for the backward sweep.
///
/// Parameter leaves copy the current value out of ModelParameters; backward()
/// adds their gradients into the parameter store, so several graphs backpropagated
/// before an optimizer step accumulate additively.
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  explicit Graph(ModelParameters& params) : params_(&params) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  Var param(const std::string& name) {
    if (!params_) throw StateError("graph has no parameter store bound");
    const std::size_t idx = params_->index_of(name);
    Var v = push(params_->entry(idx).value, true, nullptr);
    nodes_[v.id].param_index = static_cast<std::ptrdiff_t>(idx);
    return v;
  }

  /// Appends an op node. `back` reads the node's grad and accumulates into its inputs.
  Var op(Tensor value, bool needs_grad, Backward back) {
    return push(std::move(value), needs_grad, needs_grad ? std::move(back) : Backward{});
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Gradient slot of a node, allocated on first use.
  Tensor& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }
  const Tensor* grad_if_any(std::size_t id) const {
    const auto& n = nodes_[id];
    return n.grad.size() == n.value.size() && !n.grad.empty() ? &n.grad : nullptr;
  }

  std::size_t size() const { return nodes_.size(); }
  ModelParameters* params() const { return params_; }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape backward.
  void backward(Var loss) {
    if (nodes_.empty() || loss.graph != this || loss.id >= nodes_.size()) {
      throw StateError("backward called without a recorded forward pass");
    }
    if (consumed_) throw StateError("backward already run on this graph");
    if (nodes_[loss.id].value.size() != 1) {
      throw ShapeError("backward needs a scalar loss, got " +
                       shape_string(nodes_[loss.id].value.shape()));
    }
    consumed_ = true;
    if (!nodes_[loss.id].needs_grad) return;
    grad(loss.id)[0] += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.back) n.back(*this, i);
      if (n.param_index >= 0) {
        auto& g = params_->entry(static_cast<std::size_t>(n.param_index)).grad;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward back;
    std::ptrdiff_t param_index = -1;
    bool needs_grad = false;
  };

  Var push(Tensor value, bool needs_grad, Backward back) {
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(back), -1, needs_grad});
    return Var{this, nodes_.size() - 1};
  }

  ModelParameters* params_ = nullptr;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace tpose::nc
