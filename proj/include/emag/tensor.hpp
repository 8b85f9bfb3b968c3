#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Operations are free
// functions that allocate a new node, record their inputs as parents and
// capture a closure that propagates the output gradient back to them. The
// graph lives as long as some handle refers to its output.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace emag::ad {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Boolean element mask, one byte per element (true = selected).
using Mask = std::vector<std::uint8_t>;

template <typename Scalar>
struct Node {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Array value;
  // Empty until a gradient reaches this node.
  Array grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  void accumulate(const Array& g);
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

template <typename Scalar>
class Tensor {
 public:
  using Array = typename Node<Scalar>::Array;
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;
  Tensor(Shape shape, Array values, bool requires_grad = false);
  Tensor(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false);
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar fill, bool requires_grad = false);
  static Tensor scalar(Scalar v, bool requires_grad = false);
  static Tensor from_vector(Shape shape, const std::vector<Scalar>& values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  // Negative axes count from the back.
  Index dim(int axis) const;
  Index size() const { return node_->value.size(); }

  const Array& value() const { return node_->value; }
  // In-place access for initializers and optimizers; bypasses the graph.
  Array& value() { return node_->value; }
  Scalar item() const;
  Scalar at(Index flat) const { return node_->value[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() > 0; }
  const Array& grad() const { return node_->grad; }
  // Drops the stored gradient entirely, so has_grad() reports false until
  // the next backward pass reaches this tensor.
  void zero_grad() { node_->grad.resize(0); }

  Tensor detach() const;

  // Accumulates d(this)/d(leaf) into every reachable leaf that requires a
  // gradient. Leaf gradients sum across calls; interior gradients are reset
  // at the start of each call.
  void backward() const;

  Node<Scalar>* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

// Builds an op output. Parents are recorded only when grad mode is on and at
// least one input requires a gradient.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, typename Tensor<Scalar>::Array value,
                           const std::vector<Tensor<Scalar>>& inputs,
                           std::function<void(Node<Scalar>&)> backward);

// --- linear algebra -------------------------------------------------------

// a[..., k] x b[k, n] -> [..., n]
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

// Batched product over identical leading dims: a[..., m, k] x b[..., k, n].
template <typename Scalar>
Tensor<Scalar> bmm(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

// Swaps the last two axes.
template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<int>& axes);

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape);

// --- elementwise ----------------------------------------------------------
// Binary ops accept equal shapes or one operand whose shape is a suffix of
// the other's (broadcast over the leading axes). A shape of {} is a scalar.

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar s);
template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& x, Scalar s);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& x);

// Elements where mask is set take `fill`; no gradient flows through them.
template <typename Scalar>
Tensor<Scalar> masked_fill(const Tensor<Scalar>& x, const Mask& mask, Scalar fill);

// Inverted dropout. Identity when !train or p == 0.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, Scalar p, bool train, std::mt19937_64& rng);

// --- last-axis normalizations ----------------------------------------------

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& bias, Scalar eps = Scalar(1e-5));

// --- structure ------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, int axis);

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, int axis, Index start, Index length);

// --- reductions (to a scalar of shape {}) -----------------------------------

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x);

// Operator sugar for the common arithmetic.
template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }

using TensorD = Tensor<double>;
using TensorF = Tensor<float>;

}  // namespace emag::ad
