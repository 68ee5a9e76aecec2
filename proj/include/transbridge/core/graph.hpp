// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "transbridge/core/dense_array.hpp"
#include "transbridge/core/param_store.hpp"

namespace tb::ad {

class Graph;

/// Handle to a node recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;
};

/// Append-only record of dense-array operations with reverse-mode accumulation.
/// Node inputs always precede the node, so reverse insertion order is a valid
/// reverse topological order.
class Graph {
 public:
  using Backprop = std::function<void(Graph&, std::size_t)>;

  explicit Graph(ParamStore& store) : store_(&store) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  ParamStore& store() noexcept { return *store_; }

  Var constant(DenseArray value) { return push("constant", {}, std::move(value), false, nullptr); }

  // Leaf that receives a gradient but is not a parameter (gradient checks on inputs).
  Var variable(DenseArray value) { return push("variable", {}, std::move(value), true, nullptr); }

  Var param(const std::string& name) {
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var{this, it->second};
    Param& p = store_->at(name);
    Var v = push("param", {}, p.value, true, nullptr);
    nodes_[v.id].param = &p;
    param_nodes_.emplace(name, v.id);
    return v;
  }

  bool has_param(const std::string& name) const { return store_->contains(name); }

  Var record(const char* tag, std::vector<std::size_t> inputs, DenseArray value, Backprop backprop) {
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || nodes_.at(in).needs_grad;
    Var v = push(tag, std::move(inputs), std::move(value), needs, nullptr);
    if (needs) nodes_[v.id].backprop = std::move(backprop);
    return v;
  }

  const DenseArray& value(Var v) const { return nodes_.at(v.id).value; }
  const DenseArray& value(std::size_t id) const { return nodes_.at(id).value; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  const char* tag(std::size_t id) const { return nodes_.at(id).tag; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient of the last backward() target wrt this node; zeros if untouched.
  DenseArray grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.has_grad ? n.grad : DenseArray(n.value.dims());
  }

  // Accumulation buffer for node id, allocated on first touch.
  DenseArray& grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.has_grad) {
      n.grad = DenseArray(n.value.dims());
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Reverse pass from a scalar node. Parameter gradients are added to the
  /// store's gradient slots; every parameter in the store is marked ready.
  void backward(Var loss) {
    if (nodes_.at(loss.id).value.size() != 1) {
      throw ShapeError("backward: loss must be scalar, got dims " +
                       dims_to_string(nodes_.at(loss.id).value.dims()));
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = DenseArray();
    }
    grad_buffer(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.needs_grad) continue;
      if (n.backprop) n.backprop(*this, i);
    }
    for (Node& n : nodes_) {
      if (n.param == nullptr || !n.has_grad) continue;
      auto& dst = n.param->grad.storage();
      const auto& src = n.grad.storage();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    for (auto& [name, p] : *store_) p.grad_ready = true;
  }

 private:
  struct Node {
    const char* tag = "";
    std::vector<std::size_t> inputs;
    DenseArray value;
    DenseArray grad;
    bool has_grad = false;
    bool needs_grad = false;
    Param* param = nullptr;
    Backprop backprop;
  };

  Var push(const char* tag, std::vector<std::size_t> inputs, DenseArray value, bool needs_grad, Param* param) {
    Node n;
    n.tag = tag;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.param = param;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  ParamStore* store_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_nodes_;
};

}  // namespace tb::ad
