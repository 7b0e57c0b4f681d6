/**
 * @file tensor.hpp
 * @brief Dense row-major tensor with reverse-mode gradient tracking.
 *
 * A Tensor is a cheap handle onto a shared node. Nodes produced by an op keep
 * references to their inputs together with a backward rule, so the graph that
 * produced a scalar loss stays alive for exactly as long as the loss does.
 * Leaves created with requires_grad accumulate gradients additively across
 * every backward pass until zero_grad() is called.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace csifb::ad {

using Shape = std::vector<std::size_t>;

/// Allocator returning 64-byte aligned storage. Vectorized kernels peel
/// differently depending on alignment, so fixing it keeps floating-point
/// results independent of where the heap happens to place a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}  // NOLINT(implicit)

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

/// Value and gradient storage of every tensor.
using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Receives the op output's values and its upstream gradient; pushes
/// contributions into whichever inputs require them.
using BackwardFn = std::function<void(std::span<const double> out, std::span<const double> grad_out)>;

struct Node;

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Buffer values, bool requires_grad = false);
  Tensor(Shape shape, std::span<const double> values, bool requires_grad = false);
  Tensor(Shape shape, const std::vector<double>& values, bool requires_grad = false)
      : Tensor(std::move(shape), std::span<const double>(values), requires_grad) {}
  Tensor(Shape shape, std::initializer_list<double> values, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer(values), requires_grad) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Direct write access. Only meaningful for leaves (optimizer updates,
  /// finite-difference probes); ops never mutate their outputs afterwards.
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  /// Gradient buffer; zeros if nothing has been accumulated yet.
  std::span<const double> grad() const;
  /// Lazily allocated, zero-initialised gradient buffer for backward rules.
  std::span<double> mutable_grad() const;
  void zero_grad();

  /// Reverse-mode sweep from a scalar. Each reachable node is visited once,
  /// in reverse topological order.
  void backward() const;

  /// Fresh leaf holding a copy of the values, disconnected from any graph.
  Tensor detach(bool requires_grad = false) const;

  /// Identity of the underlying node (for graph bookkeeping and tests).
  const Node* id() const { return node_.get(); }

  /// Records an op result. Inputs that require gradients make the result
  /// require one too, and `backward` is kept only in that case (and only
  /// while gradient recording is enabled).
  static Tensor make_result(const char* op_name, Shape shape, Buffer values,
                            std::vector<Tensor> inputs, BackwardFn backward);
  /// Result that shares `source`'s storage under a new shape.
  static Tensor make_alias(Shape shape, const Tensor& source, BackwardFn backward);

 private:
  void attach(std::vector<Tensor> inputs, BackwardFn backward);

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Multiply-accumulate count of matmul-family ops run on this thread.
std::uint64_t& mac_counter();

}  // namespace csifb::ad
