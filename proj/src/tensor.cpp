// SPDX-License-Identifier: Apache-2.0
#include "nvk/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>
#include <utility>

#include "nvk/error.hpp"

namespace nvk {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

float* Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
  return grad.data();
}

void Node::accumulate(std::span<const float> g) {
  float* dst = grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

Tensor make_result(Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                   const char* op, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (auto& t : inputs) node->parents.push_back(t.node_ptr());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  std::vector<float> values(nvk::numel(shape), value);
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (nvk::numel(shape) != values.size()) {
    throw DimensionError("shape " + to_string(shape) + " needs " + std::to_string(nvk::numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->data.size(); }
std::span<const float> Tensor::data() const { return node_->data; }
std::span<float> Tensor::mutable_data() { return node_->data; }

float Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

float Tensor::at(std::size_t r, std::size_t c) const { return node_->data[r * shape().back() + c]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const float> Tensor::grad() const { return node_->grad; }
std::span<float> Tensor::mutable_grad() { return {node_->grad_buffer(), node_->data.size()}; }
void Tensor::zero_grad() { node_->grad.clear(); }

const char* Tensor::op_name() const { return node_->op; }

Tensor Tensor::detach() const { return Tensor::from(shape(), node_->data, false); }

Tensor Tensor::clone() const { return Tensor::from(shape(), node_->data, node_->requires_grad && node_->is_leaf()); }

Tape Tape::record(const Tensor& root) {
  Tape tape;
  std::unordered_set<detail::Node*> seen;
  // Iterative post-order DFS; a node is emitted after all of its parents.
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tensor::backward() const {
  if (!node_) throw ContractError("backward() on an undefined tensor");
  if (numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + to_string(shape()));
  }
  if (!node_->requires_grad) throw ContractError("loss is not connected to any tensor that requires grad");
  Tape tape = Tape::record(*this);
  for (auto* n : tape.nodes()) {
    if (!n->is_leaf()) n->grad.clear();
  }
  node_->grad_buffer()[0] += 1.0f;
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf() || n->grad.empty() || !n->backward) continue;
    n->backward(*n);
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace nvk
