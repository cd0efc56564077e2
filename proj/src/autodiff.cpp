#include "mfdelay/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>
#include <unordered_set>

#include "mfdelay/errors.hpp"

namespace mfd::ad {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

MatMap as_matrix(Buffer& buf, std::size_t rows, std::size_t cols) {
  return MatMap(buf.data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

bool wants_grad(const std::shared_ptr<Node>& n) { return n && n->requires_grad; }

struct Broadcast {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Shape shape;
};

std::size_t broadcast_dim(std::size_t a, std::size_t b, const char* op,
                          const Tensor& ta, const Tensor& tb) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(ta.shape()) +
                   " with " + shape_string(tb.shape()));
}

Broadcast broadcast(const Tensor& a, const Tensor& b, const char* op) {
  Broadcast out;
  out.rows = broadcast_dim(a.rows(), b.rows(), op, a, b);
  out.cols = broadcast_dim(a.cols(), b.cols(), op, a, b);
  const auto matches = [&](const Tensor& t) {
    return t.rows() == out.rows && t.cols() == out.cols;
  };
  if (a.shape() == b.shape() || matches(a)) {
    out.shape = a.shape();
  } else if (matches(b)) {
    out.shape = b.shape();
  } else {
    out.shape = Shape{out.rows, out.cols};
  }
  return out;
}

inline std::size_t bindex(const Tensor& t, std::size_t r, std::size_t c) {
  return (t.rows() == 1 ? 0 : r) * t.cols() + (t.cols() == 1 ? 0 : c);
}

// Shared machinery for broadcasting binary ops. `fwd` computes the value,
// `da`/`db` the local partials given (x, y).
template <class Fwd, class Da, class Db>
Var binary_op(const Var& a, const Var& b, const char* name, Fwd fwd, Da da, Db db) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  const Broadcast bc = broadcast(ta, tb, name);
  Tensor out(bc.shape);
  const bool same = ta.shape() == tb.shape();
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ta[i], tb[i]);
  } else {
    for (std::size_t r = 0; r < bc.rows; ++r) {
      for (std::size_t c = 0; c < bc.cols; ++c) {
        out[r * bc.cols + c] = fwd(ta[bindex(ta, r, c)], tb[bindex(tb, r, c)]);
      }
    }
  }
  return make_op(std::move(out), {a, b}, [bc, same, da, db](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    const Tensor& xa = pa->value;
    const Tensor& xb = pb->value;
    const auto& g = self.grad;
    if (wants_grad(pa)) {
      auto& ga = pa->grad_buffer();
      if (same) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(xa[i], xb[i]);
      } else {
        for (std::size_t r = 0; r < bc.rows; ++r) {
          for (std::size_t c = 0; c < bc.cols; ++c) {
            const std::size_t ia = bindex(xa, r, c);
            const std::size_t ib = bindex(xb, r, c);
            ga[ia] += g[r * bc.cols + c] * da(xa[ia], xb[ib]);
          }
        }
      }
    }
    if (wants_grad(pb)) {
      auto& gb = pb->grad_buffer();
      if (same) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(xa[i], xb[i]);
      } else {
        for (std::size_t r = 0; r < bc.rows; ++r) {
          for (std::size_t c = 0; c < bc.cols; ++c) {
            const std::size_t ia = bindex(xa, r, c);
            const std::size_t ib = bindex(xb, r, c);
            gb[ib] += g[r * bc.cols + c] * db(xa[ia], xb[ib]);
          }
        }
      }
    }
  });
}

// `dydx` receives (input, output) so activations can reuse their value.
template <class Fwd, class Deriv>
Var unary_op(const Var& a, Fwd fwd, Deriv dydx) {
  const Tensor& ta = a.value();
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ta[i]);
  return make_op(std::move(out), {a}, [dydx](Node& self) {
    const auto& p = self.parents[0];
    auto& gp = p->grad_buffer();
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      gp[i] += g[i] * dydx(p->value[i], self.value[i]);
    }
  });
}

}  // namespace

// ---------------------------------------------------------------- Var / Node

const Tensor& Var::value() const {
  if (!node_) throw UsageError("access to an undefined Var");
  return node_->value;
}

Tensor& Var::mutable_value() {
  if (!node_) throw UsageError("access to an undefined Var");
  return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

bool Var::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Var::grad() const {
  if (!has_grad()) return {};
  return node_->grad;
}

Tensor Var::grad_tensor() const {
  if (!has_grad()) throw UsageError("no gradient has been computed for this Var");
  return Tensor(node_->value.shape(), node_->grad);
}

void Var::zero_grad() {
  if (node_) Buffer().swap(node_->grad);
}

Buffer& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var detach(const Var& v) { return constant(v.value()); }

Var make_op(Tensor value, std::vector<Var> parents, BackwardFn fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (!g_grad_enabled) return Var(std::move(n));
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return Var(std::move(n));
  n->requires_grad = true;
  n->parents.reserve(parents.size());
  for (auto& p : parents) n->parents.push_back(p.shared());
  n->backward_fn = std::move(fn);
  return Var(std::move(n));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var scale(const Var& a, double k) {
  return unary_op(a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Var add_scalar(const Var& a, double k) {
  return unary_op(a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var square(const Var& a) {
  return unary_op(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sigmoid(const Var& a) {
  return unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(const Var& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) {
    throw ShapeError("matmul: " + shape_string(ta.shape()) + " x " +
                     shape_string(tb.shape()));
  }
  const std::size_t m = ta.rows(), n = tb.cols();
  Tensor out(Shape{m, n});
  as_matrix(out.storage(), m, n).noalias() = as_matrix(ta) * as_matrix(tb);
  return make_op(std::move(out), {a, b}, [m, n](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    const ConstMatMap g(self.grad.data(), static_cast<Eigen::Index>(m),
                        static_cast<Eigen::Index>(n));
    if (wants_grad(pa)) {
      auto& ga = pa->grad_buffer();
      as_matrix(ga, pa->value.rows(), pa->value.cols()).noalias() +=
          g * as_matrix(pb->value).transpose();
    }
    if (wants_grad(pb)) {
      auto& gb = pb->grad_buffer();
      as_matrix(gb, pb->value.rows(), pb->value.cols()).noalias() +=
          as_matrix(pa->value).transpose() * g;
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& tx = x.value();
  const Tensor& tw = weight.value();
  const Tensor& tb = bias.value();
  if (tx.rank() != 2 || tw.rank() != 2 || tx.cols() != tw.cols() ||
      tb.size() != tw.rows()) {
    throw ShapeError("linear: input " + shape_string(tx.shape()) + ", weight " +
                     shape_string(tw.shape()) + ", bias " + shape_string(tb.shape()));
  }
  const std::size_t m = tx.rows(), out_dim = tw.rows();
  Tensor out(Shape{m, out_dim});
  auto y = as_matrix(out.storage(), m, out_dim);
  y.noalias() = as_matrix(tx) * as_matrix(tw).transpose();
  const Eigen::Map<const Eigen::RowVectorXd> b(tb.data().data(),
                                               static_cast<Eigen::Index>(out_dim));
  y.rowwise() += b;
  return make_op(std::move(out), {x, weight, bias}, [m, out_dim](Node& self) {
    const auto& px = self.parents[0];
    const auto& pw = self.parents[1];
    const auto& pb = self.parents[2];
    const ConstMatMap g(self.grad.data(), static_cast<Eigen::Index>(m),
                        static_cast<Eigen::Index>(out_dim));
    if (wants_grad(px)) {
      auto& gx = px->grad_buffer();
      as_matrix(gx, m, px->value.cols()).noalias() += g * as_matrix(pw->value);
    }
    if (wants_grad(pw)) {
      auto& gw = pw->grad_buffer();
      as_matrix(gw, out_dim, pw->value.cols()).noalias() +=
          g.transpose() * as_matrix(px->value);
    }
    if (wants_grad(pb)) {
      auto& gb = pb->grad_buffer();
      Eigen::Map<Eigen::RowVectorXd>(gb.data(), static_cast<Eigen::Index>(out_dim)) +=
          g.colwise().sum();
    }
  });
}

// ---------------------------------------------------------------- reductions

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make_op(Tensor::scalar(s), {a}, [](Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    const double g = self.grad[0];
    for (double& v : gp) v += g;
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw UsageError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var mean_rows(const Var& a) {
  const Tensor& ta = a.value();
  const std::size_t m = ta.rows(), n = ta.cols();
  if (m == 0) throw UsageError("mean_rows of an empty batch");
  Tensor out(Shape{1, n});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[c] += ta[r * n + c];
  }
  const double inv = 1.0 / static_cast<double>(m);
  for (std::size_t c = 0; c < n; ++c) out[c] *= inv;
  return make_op(std::move(out), {a}, [m, n, inv](Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) gp[r * n + c] += self.grad[c] * inv;
    }
  });
}

// ---------------------------------------------------------------- reshaping

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_cols of nothing");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
  }
  Tensor out(Shape{m, total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor& t = p.value();
    const std::size_t w = t.cols();
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < w; ++c) out[r * total + offset + c] = t[r * w + c];
    }
    offset += w;
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_op(std::move(out), std::move(parents), [m, total](Node& self) {
    std::size_t off = 0;
    for (const auto& p : self.parents) {
      const std::size_t w = p->value.cols();
      if (wants_grad(p)) {
        auto& gp = p->grad_buffer();
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += self.grad[r * total + off + c];
        }
      }
      off += w;
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  if (shape_size(shape) != a.value().size()) {
    throw ShapeError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  Tensor out(std::move(shape), a.value().storage());
  return make_op(std::move(out), {a}, [](Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i];
  });
}

Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
  const Tensor& ta = a.value();
  const std::size_t m = ta.rows(), n = ta.cols();
  if (start + count > n) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " + shape_string(ta.shape()));
  }
  Tensor out(Shape{m, count});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = ta[r * n + start + c];
  }
  return make_op(std::move(out), {a}, [m, n, start, count](Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < count; ++c) gp[r * n + start + c] += self.grad[r * count + c];
    }
  });
}

// ---------------------------------------------------------------- reverse pass

void backward(const Var& loss) {
  if (!loss.defined()) throw UsageError("backward on an undefined Var");
  if (loss.value().size() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " +
                     shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; recursion would overflow on long unrolls.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* child = node->parents[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->parents.empty()) continue;  // leaf: keep accumulated gradient
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    Buffer().swap(n->grad);
  }
}

}  // namespace mfd::ad
