#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bdd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class Tensor;

namespace detail {

// One vertex of the define-by-run graph. Leaves have no inputs and no
// backward rule; operation outputs keep their inputs alive through `inputs`.
struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs that require grad.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major double array with an optional gradient. Copies are
/// shallow handles onto the same node, matching how graph edges share data.
class Tensor {
 public:
  Tensor();

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->values.size(); }

  std::span<const double> values() const { return node_->values; }
  std::span<double> mutable_values() { return node_->values; }
  double operator[](std::size_t i) const { return node_->values[i]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad() { node_->grad.clear(); }

  bool is_leaf() const { return node_->inputs.empty(); }
  const std::string& op_name() const { return node_->op; }

  // Fresh leaf holding a copy of the values; no graph history, no grad.
  Tensor detach() const;
  // Independent deep copy of values, grad and requires_grad (no history).
  Tensor clone() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered view of every node reachable from a root.
/// Inputs always precede their consumers.
class ComputeGraph {
 public:
  static ComputeGraph trace(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  std::span<detail::Node* const> nodes() const { return order_; }
  std::size_t position(const Tensor& t) const;

 private:
  std::vector<detail::Node*> order_;
  std::shared_ptr<detail::Node> root_;
};

/// Reverse-mode accumulation from a scalar loss. Seeds d(loss)/d(loss) = 1
/// and sums contributions into every reachable node that requires grad.
/// Nodes with requires_grad == false are never written.
void backward(const Tensor& loss);
void backward(const Tensor& loss, const ComputeGraph& graph);

namespace detail {

// Builds an operation output. requires_grad is inherited from the inputs;
// when no input needs a gradient the backward rule is dropped.
Tensor make_op(std::string op, Shape shape, std::vector<double> values,
               std::vector<Tensor> inputs, std::function<void(Node&)> backward);

}  // namespace detail

}  // namespace bdd
