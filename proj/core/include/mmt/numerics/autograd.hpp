// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mmt/numerics/tensor.hpp"

namespace mmt::num {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the reverse-mode graph.
///
/// `backward` reads `grad` (dL/d value) and accumulates into the inputs'
/// gradient buffers. Nodes are ordered by creation, so reverse creation
/// order is a valid topological order.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::uint64_t order = 0;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward;

  /// Gradient buffer, zero-initialised on first use.
  Tensor& grad_buffer();
};

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const NodePtr& node() const { return node_; }
  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

bool grad_enabled() noexcept;

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Creates the output of an operation. The backward closure is recorded only
/// when grad mode is on and some input requires a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Back-propagates from a scalar (single element) output.
void backward(const Var& output);

/// Accumulates `delta` into `node`'s gradient if it participates in the graph.
void accumulate_grad(Node& node, const Tensor& delta);

/// Learnable tensor with a stable hierarchical name.
struct Parameter {
  std::string name;
  Var var;

  const Tensor& value() const { return var.value(); }
  Tensor& value() { return var.mutable_value(); }
  const Tensor& grad() const { return var.grad(); }
  Tensor& grad() { return var.node()->grad; }
};

/// Owns every parameter of a model in registration order.
class ParameterStore {
 public:
  Var add(const std::string& name, Tensor init);

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  Parameter& find(const std::string& name);
  const Parameter& find(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grad();
  /// Frozen parameters never receive gradients.
  void set_frozen(const std::string& prefix, bool frozen);
  std::size_t scalar_count() const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace mmt::num
