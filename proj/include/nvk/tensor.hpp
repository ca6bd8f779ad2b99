// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nvk {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

/// One recorded value in the computation graph. Leaves have no parents and no
/// backward closure; every other node owns strong references to its inputs.
struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  /// Adds `g` into this node's gradient, allocating a zeroed buffer on first use.
  void accumulate(std::span<const float> g);
  float* grad_buffer();
};

}  // namespace detail

/// Dense row-major float32 tensor. Copies share storage (handle semantics,
/// like a graph variable); use clone() for an independent value.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t numel() const;

  std::span<const float> data() const;
  /// Direct write access. Only meant for leaves (parameters, inputs).
  std::span<float> mutable_data();
  float item() const;
  float at(std::size_t flat) const { return data()[flat]; }
  float at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Leaves accumulate into their grad.
  void backward() const;

  /// Same values, cut from the graph.
  Tensor detach() const;
  /// Independent copy of the values (leaf, requires_grad copied).
  Tensor clone() const;

  const char* op_name() const;
  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Whether new operations are recorded for differentiation on this thread.
bool grad_enabled();

/// Disables graph recording for its lifetime (teacher passes, inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Nodes reachable from a root in topological order (inputs first). This is
/// the replay order backward() walks in reverse.
class Tape {
 public:
  static Tape record(const Tensor& root);
  const std::vector<detail::Node*>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<detail::Node*> nodes_;
};

namespace detail {

/// Builds an op result. `backward` is only kept when grad mode is on and one
/// of the inputs requires a gradient.
Tensor make_result(Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                   const char* op, std::function<void(Node&)> backward);

}  // namespace detail

}  // namespace nvk
