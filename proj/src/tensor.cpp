#include "bdd/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "bdd/errors.hpp"

namespace bdd {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {
  node_->shape = {0};
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("Tensor::from: shape " + shape_to_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  }
  return node_->values[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  if (!flag) node_->grad.clear();
  return *this;
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->requires_grad) node_->grad.assign(node_->values.size(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->values, false); }

Tensor Tensor::clone() const {
  auto t = from(shape(), node_->values, node_->requires_grad);
  t.node_->grad = node_->grad;
  return t;
}

ComputeGraph ComputeGraph::trace(const Tensor& root) {
  ComputeGraph g;
  g.root_ = root.node();
  std::unordered_set<const detail::Node*> done;
  // Iterative post-order DFS: a node is emitted after all of its inputs.
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (done.count(node)) {
      stack.pop_back();
      continue;
    }
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (!done.count(child)) stack.emplace_back(child, 0);
      continue;
    }
    done.insert(node);
    g.order_.push_back(node);
    stack.pop_back();
  }
  return g;
}

std::size_t ComputeGraph::position(const Tensor& t) const {
  auto it = std::find(order_.begin(), order_.end(), t.node().get());
  if (it == order_.end()) throw ContractError("tensor is not part of this graph");
  return static_cast<std::size_t>(it - order_.begin());
}

void backward(const Tensor& loss) { backward(loss, ComputeGraph::trace(loss)); }

void backward(const Tensor& loss, const ComputeGraph& graph) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_to_string(loss.shape()));
  }
  auto nodes = graph.nodes();
  if (nodes.empty() || nodes.back() != loss.node().get()) {
    throw ContractError("backward: graph was not traced from this loss");
  }
  if (!loss.requires_grad()) return;

  // Intermediate results get a fresh buffer; leaves accumulate across calls.
  for (detail::Node* n : nodes) {
    if (!n->requires_grad) continue;
    if (n->backward) {
      n->grad.assign(n->values.size(), 0.0);
    } else {
      n->ensure_grad();
    }
  }
  nodes.back()->grad[0] += 1.0;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    detail::Node* n = *it;
    if (n->requires_grad && n->backward) n->backward(*n);
  }
}

namespace detail {

Tensor make_op(std::string op, Shape shape, std::vector<double> values,
               std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  node->shape = std::move(shape);
  node->values = std::move(values);
  for (const auto& in : inputs) {
    node->requires_grad = node->requires_grad || in.requires_grad();
  }
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

}  // namespace bdd
