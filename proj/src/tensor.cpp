/**
 * @file tensor.cpp
 * @brief Tensor handles, graph recording and the reverse sweep.
 */
#include "csifb/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "csifb/errors.hpp"

namespace csifb::ad {

struct Node {
  Shape shape;
  // Shared so that reshapes alias their input instead of copying.
  std::shared_ptr<Buffer> values;
  Buffer grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

namespace {

thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_mac_counter = 0;

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::span<const double> values, bool requires_grad)
    : Tensor(std::move(shape), Buffer(values.begin(), values.end()), requires_grad) {}

Tensor::Tensor(Shape shape, Buffer values, bool requires_grad) {
  if (ad::numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + ad::to_string(shape) + " needs " +
                     std::to_string(ad::numel(shape)) + " values, got " + std::to_string(values.size()));
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->values = std::make_shared<Buffer>(std::move(values));
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = csifb::ad::numel(shape);
  return Tensor(std::move(shape), Buffer(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape()));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->values->size(); }

std::span<const double> Tensor::values() const { return *node_->values; }

std::span<double> Tensor::mutable_values() { return *node_->values; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return (*node_->values)[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::is_leaf() const { return !node_->backward; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->values->size(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->values->size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  if (node_->grad.empty()) node_->grad.assign(1, 0.0);
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(*node->values, node->grad);
    // Interior gradients are consumed exactly once.
    Buffer().swap(node->grad);
  }
}

Tensor Tensor::detach(bool requires_grad) const {
  return Tensor(node_->shape, *node_->values, requires_grad);
}

namespace {

bool all_finite(std::span<const double> v) {
  return Eigen::Map<const Eigen::ArrayXd>(v.data(), static_cast<Eigen::Index>(v.size())).allFinite();
}

}  // namespace

Tensor Tensor::make_result(const char* op_name, Shape shape, Buffer values,
                           std::vector<Tensor> inputs, BackwardFn backward) {
  if (!all_finite(values)) {
    bool inputs_finite = true;
    for (const auto& in : inputs) inputs_finite = inputs_finite && all_finite(in.values());
    throw NumericError(std::string(op_name) + ": non-finite output" +
                       (inputs_finite ? " from finite inputs" : " (non-finite input)"));
  }
  Tensor out(std::move(shape), std::move(values), false);
  out.attach(std::move(inputs), std::move(backward));
  return out;
}

Tensor Tensor::make_alias(Shape shape, const Tensor& source, BackwardFn backward) {
  if (ad::numel(shape) != source.numel()) {
    throw ShapeError("cannot alias " + ad::to_string(source.shape()) + " as " + ad::to_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = source.node_->values;
  Tensor out(std::move(node));
  out.attach({source}, std::move(backward));
  return out;
}

void Tensor::attach(std::vector<Tensor> inputs, BackwardFn backward) {
  if (!t_grad_enabled) return;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return;
  node_->requires_grad = true;
  for (auto& in : inputs) {
    if (in.defined() && in.requires_grad()) node_->parents.push_back(in.node_);
  }
  node_->backward = std::move(backward);
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

std::uint64_t& mac_counter() { return t_mac_counter; }

}  // namespace csifb::ad
