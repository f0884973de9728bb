#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "jsfusion/errors.hpp"

namespace jsfusion {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowMatrixMap = Eigen::Map<RowMatrixX<Scalar>>;

template <typename Scalar>
using ConstRowMatrixMap = Eigen::Map<const RowMatrixX<Scalar>>;

/// Storage behind a Tensor handle: values, lazily allocated gradient, and
/// whether reverse-mode adjoints should flow into it.
template <typename Scalar>
struct TensorNode {
  Shape shape;
  VectorX<Scalar> value;
  VectorX<Scalar> grad;
  bool requires_grad = false;

  void accumulate(const VectorX<Scalar>& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }

  VectorX<Scalar>& grad_buffer() {
    if (grad.size() == 0) grad = VectorX<Scalar>::Zero(value.size());
    return grad;
  }
};

/// Ordered record of adjoint closures. One tape per thread at most is
/// active; a thread without an active tape evaluates purely (no recording),
/// which is how inference stays free of shared mutable state.
class Tape {
 public:
  void record(std::function<void()> adjoint) { entries_.push_back(std::move(adjoint)); }

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

  /// Runs adjoints in exact reverse execution order, then clears.
  void replay() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

  void clear() { entries_.clear(); }

  static Tape* current() { return current_slot(); }

 private:
  friend class GradTape;
  friend class NoGradScope;
  static Tape*& current_slot() {
    thread_local Tape* active = nullptr;
    return active;
  }

  std::vector<std::function<void()>> entries_;
};

/// RAII scope that makes a fresh tape current on this thread.
class GradTape {
 public:
  GradTape() : previous_(Tape::current_slot()) { Tape::current_slot() = &tape_; }
  ~GradTape() { Tape::current_slot() = previous_; }
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  Tape& tape() { return tape_; }

 private:
  Tape tape_;
  Tape* previous_;
};

/// Suspends recording on this thread for its lifetime.
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape::current_slot()) { Tape::current_slot() = nullptr; }
  ~NoGradScope() { Tape::current_slot() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// Dense row-major n-d array. A Tensor is a shared handle: copies alias the
/// same storage, which is what lets parameters accumulate gradients from
/// every use site. Use clone() for an independent copy.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Vector = VectorX<Scalar>;
  using Node = TensorNode<Scalar>;

  Tensor() : node_(std::make_shared<Node>()) {}

  Tensor(Shape shape, Vector value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    for (Index d : shape) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
    }
    if (shape_size(shape) != value.size()) {
      throw ShapeError("tensor shape " + shape_string(shape) + " does not hold " +
                       std::to_string(value.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Index n = shape_size(shape);
    return Tensor(std::move(shape), Vector::Zero(n), requires_grad);
  }

  static Tensor constant(Shape shape, Scalar c, bool requires_grad = false) {
    Index n = shape_size(shape);
    return Tensor(std::move(shape), Vector::Constant(n, c), requires_grad);
  }

  static Tensor scalar(Scalar c, bool requires_grad = false) {
    return Tensor(Shape{}, Vector::Constant(1, c), requires_grad);
  }

  template <typename Derived>
  static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m, bool requires_grad = false) {
    RowMatrixX<Scalar> rm = m.template cast<Scalar>();
    Vector v = Eigen::Map<const Vector>(rm.data(), rm.size());
    return Tensor(Shape{rm.rows(), rm.cols()}, std::move(v), requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  Index size() const { return node_->value.size(); }

  const Vector& value() const { return node_->value; }
  Vector& value() { return node_->value; }

  bool has_grad() const { return node_->grad.size() != 0; }
  const Vector& grad() const { return node_->grad; }
  Vector& grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.resize(0); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  Scalar item() const {
    if (size() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }

  /// Row-major 2-D view: leading dimensions collapse into rows.
  RowMatrixMap<Scalar> matrix() {
    auto [r, c] = matrix_extent();
    return RowMatrixMap<Scalar>(node_->value.data(), r, c);
  }
  ConstRowMatrixMap<Scalar> matrix() const {
    auto [r, c] = matrix_extent();
    return ConstRowMatrixMap<Scalar>(node_->value.data(), r, c);
  }

  Tensor clone() const { return Tensor(shape(), value(), requires_grad()); }
  Tensor detach() const { return Tensor(shape(), value(), false); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::pair<Index, Index> matrix_extent() const {
    const Shape& s = node_->shape;
    if (s.empty()) return {1, 1};
    Index cols = s.back();
    return {cols == 0 ? 0 : size() / cols, cols};
  }

  std::shared_ptr<Node> node_;
};

/// Seeds d(loss)/d(loss) = 1 and replays the current tape in reverse.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.size() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  Tape* tape = Tape::current();
  if (tape == nullptr || tape->empty()) {
    throw UsageError("backward() called without a recorded tape");
  }
  loss.node()->grad_buffer().setOnes();
  tape->replay();
}

}  // namespace jsfusion
