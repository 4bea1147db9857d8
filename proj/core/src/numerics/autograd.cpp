// SPDX-License-Identifier: Apache-2.0
#include "mmt/numerics/autograd.hpp"

#include <algorithm>
#include <unordered_set>

#include "mmt/errors.hpp"

namespace mmt::num {
namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_node_counter = 0;

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor::zeros_like(value);
  if (grad.shape() != value.shape()) grad = Tensor::zeros_like(value);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->order = ++g_node_counter;
  if (requires_grad) node_->grad = Tensor::zeros_like(node_->value);
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->order = ++g_node_counter;
  const bool track = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                   [](const Var& v) { return v.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void accumulate_grad(Node& node, const Tensor& delta) {
  if (!node.requires_grad) return;
  Tensor& g = node.grad_buffer();
  if (g.size() != delta.size()) throw DimensionError("gradient shape mismatch");
  double* dst = g.data();
  const double* src = delta.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

void backward(const Var& output) {
  if (!output || !output.requires_grad()) throw ContractError("backward() on a value that does not require grad");
  if (output.value().size() != 1) throw DimensionError("backward() requires a scalar output");

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{output.node().get()};
  seen.insert(output.node().get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->order > b->order; });

  output.node()->grad_buffer().fill(1.0);
  for (Node* n : order) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Var ParameterStore::add(const std::string& name, Tensor init) {
  if (index_.count(name) != 0) throw DuplicateNameError("duplicate parameter name: " + name);
  Var v(std::move(init), true);
  index_[name] = params_.size();
  params_.push_back(Parameter{name, v});
  return v;
}

Parameter& ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second];
}

const Parameter& ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second];
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    if (p.grad().empty()) p.grad() = Tensor::zeros_like(p.value());
    p.grad().fill(0.0);
  }
}

void ParameterStore::set_frozen(const std::string& prefix, bool frozen) {
  for (auto& p : params_) {
    if (p.name.rfind(prefix, 0) == 0) p.var.node()->requires_grad = !frozen;
  }
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value().size();
  return n;
}

}  // namespace mmt::num
