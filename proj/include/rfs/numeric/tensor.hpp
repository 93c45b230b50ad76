#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rfs/common.hpp"

namespace rfs {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorNode&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Whether newly created operation results record graph nodes. Thread-local.
bool grad_enabled();

/// Disables graph recording for its lifetime (inference, KV-cached decoding).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor with an optional reverse-mode graph behind it.
///
/// Copies share storage: a Tensor is a handle. Values are fixed once an
/// operation produced them; only leaves created with requires_grad are meant
/// to be updated in place (by an optimizer) between graph constructions.
template <typename T>
class Tensor {
 public:
  using Node = detail::TensorNode<T>;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  /// Gradient view; zeros of the right shape if nothing has accumulated.
  std::span<const T> grad() const;
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  /// Builds an operation result. Records a graph node
  /// only when grad mode is on and some parent requires gradients.
  static Tensor make_result(Shape shape, std::vector<T> data,
                            std::vector<Tensor> parents,
                            std::function<void(Node&)> backward);

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

/// Topologically ordered operation records reachable from a scalar loss.
template <typename T>
class Graph {
 public:
  using Node = detail::TensorNode<T>;

  explicit Graph(const Tensor<T>& root);

  /// Records in topological order: every record appears after its parents.
  const std::vector<Node*>& records() const { return order_; }
  std::size_t size() const { return order_.size(); }

  /// Seeds the root gradient with one and visits each record exactly once in
  /// reverse order. Leaf gradients accumulate additively across calls.
  void backpropagate();

 private:
  std::shared_ptr<Node> root_;
  std::vector<Node*> order_;
};

/// Computes dLoss/dLeaf into every reachable leaf that requires gradients.
/// Throws ShapeError for a non-scalar loss.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace rfs
