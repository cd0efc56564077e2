#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mfdelay/tensor.hpp"

namespace mfd::ad {

struct Node;

/// Handle to a value in the computation graph.
///
/// Vars are cheap to copy and share the underlying node. Interior nodes keep
/// their parents alive until the last handle downstream of them is dropped,
/// so letting a loss go out of scope releases the whole tape.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const;
  /// Mutable access for in-place parameter updates. Never use on interior nodes.
  Tensor& mutable_value();
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  Tensor grad_tensor() const;
  /// Drops the accumulated gradient; a parameter without a gradient is
  /// reported as missing by the optimizers.
  void zero_grad();

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& shared() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Tensor value;
  Buffer grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward_fn;

  /// Gradient storage, allocated as zeros on first use.
  Buffer& grad_buffer();
};

Var constant(Tensor value);
Var parameter(Tensor value);
/// Copy of the value that is cut from the graph.
Var detach(const Var& v);

/// Builds an op result. The node records `parents` and `fn` only when
/// gradients are enabled and at least one parent requires them.
Var make_op(Tensor value, std::vector<Var> parents, BackwardFn fn);

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled() noexcept;

// Elementwise ops broadcast rank-0 tensors and size-1 rows/columns.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double k);
Var add_scalar(const Var& a, double k);
Var neg(const Var& a);
Var square(const Var& a);

Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);

Var matmul(const Var& a, const Var& b);
/// x [M x in], weight [out x in], bias [out] -> x * weight^T + bias.
Var linear(const Var& x, const Var& weight, const Var& bias);

Var sum(const Var& a);
Var mean(const Var& a);
/// Column means of an [M x n] matrix as a [1 x n] row.
Var mean_rows(const Var& a);

Var concat_cols(std::span<const Var> parts);
/// Same data, new shape of equal element count.
Var reshape(const Var& a, Shape shape);
Var slice_cols(const Var& a, std::size_t start, std::size_t count);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double k, const Var& a) { return scale(a, k); }
inline Var operator*(const Var& a, double k) { return scale(a, k); }
inline Var operator+(const Var& a, double k) { return add_scalar(a, k); }
inline Var operator-(const Var& a) { return neg(a); }

/// Reverse pass from a scalar loss. Leaf gradients accumulate across calls
/// until cleared with zero_grad(); interior gradients are released as the
/// pass proceeds.
void backward(const Var& loss);

}  // namespace mfd::ad
