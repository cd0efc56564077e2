#include "mfdelay/layers.hpp"

#include <Eigen/Core>
#include <cmath>

#include "mfdelay/counter_rng.hpp"
#include "mfdelay/errors.hpp"

namespace mfd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap view(const Tensor& t) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

MatMap view(Buffer& buf, std::size_t rows, std::size_t cols) {
  return MatMap(buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Vectorized exp does the work; the odd Taylor series covers |x| < 0.01 where
// (1 - e) / (1 + e) would cancel.
template <typename Block>
void tanh_inplace(Block&& b) {
  auto x = b.array();
  const Eigen::ArrayXXd ax = x.abs();
  const Eigen::ArrayXXd e = (-2.0 * ax).exp();
  const Eigen::ArrayXXd x2 = x.square();
  const Eigen::ArrayXXd series = x * (1.0 + x2 * (-1.0 / 3 + x2 * (2.0 / 15 - x2 * (17.0 / 315))));
  x = (ax < 0.01).select(series, x.sign() * (1.0 - e) / (1.0 + e));
}

template <typename Block>
void sigmoid_inplace(Block&& b) {
  auto x = b.array();
  x = 1.0 / (1.0 + (-x).exp());
}

constexpr std::array<const char*, 4> kGateSuffix = {"f", "i", "o", "c"};

ad::Var apply_activation(Activation act, const ad::Var& v) {
  switch (act) {
    case Activation::relu: return ad::relu(v);
    case Activation::sigmoid: return ad::sigmoid(v);
    case Activation::tanh: return ad::tanh(v);
    case Activation::identity: return v;
  }
  return v;
}

ad::Var as_batch(const ad::Var& v) {
  if (v.value().rank() == 2) return v;
  return ad::reshape(v, Shape{1, v.value().size()});
}

ad::Var glorot_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed,
                      const std::string& name) {
  if (rows == 0 || cols == 0) throw UsageError("zero dimension for parameter " + name);
  const double bound = glorot_bound(cols, rows);
  const CounterRng rng(seed, stream_id(name));
  Tensor t(Shape{rows, cols});
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = bound * (2.0 * rng.uniform(k, 0) - 1.0);
  return ad::parameter(std::move(t));
}

ad::Var zero_bias(std::size_t n, const std::string& name) {
  if (n == 0) throw UsageError("zero dimension for parameter " + name);
  return ad::parameter(Tensor(Shape{n}));
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw UsageError("unknown activation '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- ParameterList

void ParameterList::add(std::string name, ad::Var var) {
  if (!var.requires_grad()) throw UsageError("parameter " + name + " does not require grad");
  params_.push_back({std::move(name), std::move(var)});
}

void ParameterList::append(const ParameterList& other) {
  params_.insert(params_.end(), other.params_.begin(), other.params_.end());
}

const NamedParam* ParameterList::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParameterList::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

void ParameterList::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

double ParameterList::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_) {
    for (double g : p.var.grad()) s += g * g;
  }
  return std::sqrt(s);
}

// ---------------------------------------------------------------- dense

ad::Var dense_forward(const DenseLayer& layer, const ad::Var& x) {
  const bool single = x.value().rank() == 1;
  if (x.cols() != layer.in_dim()) {
    throw ShapeError("dense_forward: input has " + std::to_string(x.cols()) +
                     " features, layer expects " + std::to_string(layer.in_dim()));
  }
  ad::Var y = apply_activation(layer.activation,
                               ad::linear(as_batch(x), layer.weight, layer.bias));
  return single ? ad::reshape(y, Shape{layer.out_dim()}) : y;
}

ad::Var mlp_forward(const Mlp& mlp, const ad::Var& x) {
  if (mlp.layers.empty()) throw UsageError("mlp_forward on an empty network");
  ad::Var h = x;
  for (const auto& layer : mlp.layers) h = dense_forward(layer, h);
  return h;
}

// ---------------------------------------------------------------- LSTM

LstmState lstm_step(const LstmCell& cell, const ad::Var& x_in, const LstmState& prev) {
  const std::size_t d = cell.input_dim, h = cell.hidden_dim;
  const bool single = x_in.value().rank() == 1;
  const ad::Var x = as_batch(x_in);
  if (x.cols() != d) {
    throw ShapeError("lstm_step: input has " + std::to_string(x.cols()) +
                     " features, cell expects " + std::to_string(d));
  }
  const std::size_t m = x.rows();
  const auto prev_or_zero = [&](const ad::Var& v, const char* what) {
    if (!v.defined()) return ad::constant(Tensor(Shape{m, h}));
    ad::Var b = as_batch(v);
    if (b.rows() != m || b.cols() != h) {
      throw ShapeError(std::string("lstm_step: ") + what + " has shape " +
                       shape_string(v.shape()) + ", expected " + std::to_string(h) +
                       " hidden units for " + std::to_string(m) + " samples");
    }
    return b;
  };
  const ad::Var a_prev = prev_or_zero(prev.hidden, "previous output");
  const ad::Var c_prev = prev_or_zero(prev.cell, "previous cell state");

  // Gate parameters stacked as [f; i; o; c] so one GEMM covers all gates.
  auto wx = std::make_shared<RowMat>(4 * h, d);
  auto wu = std::make_shared<RowMat>(4 * h, h);
  Eigen::RowVectorXd bias(4 * h);
  for (std::size_t g = 0; g < 4; ++g) {
    const auto gi = static_cast<Eigen::Index>(g * h);
    const auto hh = static_cast<Eigen::Index>(h);
    wx->middleRows(gi, hh) = view(cell.input_weight[g].value());
    wu->middleRows(gi, hh) = view(cell.recurrent_weight[g].value());
    bias.segment(gi, hh) = view(cell.bias[g].value());
  }

  auto gates = std::make_shared<RowMat>(m, 4 * h);
  gates->noalias() = view(x.value()) * wx->transpose();
  gates->noalias() += view(a_prev.value()) * wu->transpose();
  gates->rowwise() += bias;
  const auto hh = static_cast<Eigen::Index>(h);
  sigmoid_inplace(gates->leftCols(3 * hh));
  tanh_inplace(gates->rightCols(hh));
  const RowMat c = gates->leftCols(hh).cwiseProduct(view(c_prev.value())) +
                   gates->middleCols(hh, hh).cwiseProduct(gates->rightCols(hh));
  auto tanh_c = std::make_shared<RowMat>(c);
  tanh_inplace(*tanh_c);

  Tensor out(Shape{m, 2 * h});
  MatMap o = view(out.storage(), m, 2 * h);
  o.leftCols(hh) = gates->middleCols(2 * hh, hh).cwiseProduct(*tanh_c);
  o.rightCols(hh) = c;

  std::vector<ad::Var> parents = {x, a_prev, c_prev};
  for (const auto* group : {&cell.input_weight, &cell.recurrent_weight, &cell.bias}) {
    parents.insert(parents.end(), group->begin(), group->end());
  }

  ad::Var joint = ad::make_op(std::move(out), std::move(parents), [=](ad::Node& self) {
    const auto& px = self.parents[0];
    const auto& pa = self.parents[1];
    const auto& pc = self.parents[2];
    const Tensor& cprev = pc->value;
    const auto& g = self.grad;
    RowMat dpre(m, 4 * h);
    const bool need_c = pc->requires_grad;
    Buffer* gc = need_c ? &pc->grad_buffer() : nullptr;
    for (std::size_t r = 0; r < m; ++r) {
      const double* gr = gates->data() + r * 4 * h;
      double* dr = dpre.data() + r * 4 * h;
      for (std::size_t j = 0; j < h; ++j) {
        const double f = gr[j], in = gr[h + j], o = gr[2 * h + j], cand = gr[3 * h + j];
        const double tc = (*tanh_c)(r, j);
        const double da = g[r * 2 * h + j];
        const double dc = g[r * 2 * h + h + j] + da * o * (1.0 - tc * tc);
        dr[j] = dc * cprev[r * h + j] * f * (1.0 - f);
        dr[h + j] = dc * cand * in * (1.0 - in);
        dr[2 * h + j] = da * tc * o * (1.0 - o);
        dr[3 * h + j] = dc * in * (1.0 - cand * cand);
        if (gc) (*gc)[r * h + j] += dc * f;
      }
    }
    if (px->requires_grad) view(px->grad_buffer(), m, d).noalias() += dpre * (*wx);
    if (pa->requires_grad) view(pa->grad_buffer(), m, h).noalias() += dpre * (*wu);

    bool any_param = false;
    for (std::size_t k = 3; k < 15; ++k) any_param = any_param || self.parents[k]->requires_grad;
    if (!any_param) return;
    const RowMat dwx = dpre.transpose() * view(px->value);
    const RowMat dwu = dpre.transpose() * view(pa->value);
    const Eigen::RowVectorXd db = dpre.colwise().sum();
    const auto hh = static_cast<Eigen::Index>(h);
    for (std::size_t gate = 0; gate < 4; ++gate) {
      const auto gi = static_cast<Eigen::Index>(gate * h);
      if (auto& p = self.parents[3 + gate]; p->requires_grad) {
        view(p->grad_buffer(), h, d) += dwx.middleRows(gi, hh);
      }
      if (auto& p = self.parents[7 + gate]; p->requires_grad) {
        view(p->grad_buffer(), h, h) += dwu.middleRows(gi, hh);
      }
      if (auto& p = self.parents[11 + gate]; p->requires_grad) {
        view(p->grad_buffer(), 1, h) += db.segment(gi, hh);
      }
    }
  });

  LstmState next{ad::slice_cols(joint, 0, h), ad::slice_cols(joint, h, h)};
  if (single) {
    next.hidden = ad::reshape(next.hidden, Shape{h});
    next.cell = ad::reshape(next.cell, Shape{h});
  }
  return next;
}

std::vector<LstmState> lstm_unroll(const LstmCell& cell, std::span<const ad::Var> inputs) {
  if (inputs.empty()) throw UsageError("lstm_unroll on an empty sequence");
  std::vector<LstmState> states;
  states.reserve(inputs.size());
  LstmState s;
  for (const auto& x : inputs) {
    s = lstm_step(cell, x, s);
    states.push_back(s);
  }
  return states;
}

// ---------------------------------------------------------------- init

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

DenseLayer make_dense(std::size_t in, std::size_t out, Activation act, std::uint64_t seed,
                      std::string_view name) {
  const std::string base(name);
  return DenseLayer{glorot_tensor(out, in, seed, base + ".weight"),
                    zero_bias(out, base + ".bias"), act};
}

Mlp make_mlp(std::size_t in, std::span<const std::size_t> hidden, std::size_t out,
             std::uint64_t seed, std::string_view name) {
  Mlp mlp;
  std::size_t prev = in;
  for (std::size_t k = 0; k <= hidden.size(); ++k) {
    const bool last = k == hidden.size();
    const std::size_t width = last ? out : hidden[k];
    mlp.layers.push_back(make_dense(prev, width, last ? Activation::identity : Activation::relu,
                                    seed, std::string(name) + "." + std::to_string(k)));
    prev = width;
  }
  return mlp;
}

LstmCell make_lstm(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed,
                   std::string_view name) {
  LstmCell cell;
  cell.input_dim = input_dim;
  cell.hidden_dim = hidden_dim;
  const std::string base(name);
  for (std::size_t g = 0; g < 4; ++g) {
    const std::string sfx = kGateSuffix[g];
    cell.input_weight[g] = glorot_tensor(hidden_dim, input_dim, seed, base + ".A_" + sfx);
    cell.recurrent_weight[g] = glorot_tensor(hidden_dim, hidden_dim, seed, base + ".U_" + sfx);
    cell.bias[g] = zero_bias(hidden_dim, base + ".b_" + sfx);
  }
  return cell;
}

void zero_fill(ParameterList& params) {
  for (auto& p : params) {
    for (double& v : p.var.mutable_value().storage()) v = 0.0;
  }
}

void collect(const DenseLayer& layer, std::string_view name, ParameterList& out) {
  out.add(std::string(name) + ".weight", layer.weight);
  out.add(std::string(name) + ".bias", layer.bias);
}

void collect(const Mlp& mlp, std::string_view name, ParameterList& out) {
  for (std::size_t k = 0; k < mlp.layers.size(); ++k) {
    collect(mlp.layers[k], std::string(name) + "." + std::to_string(k), out);
  }
}

void collect(const LstmCell& cell, std::string_view name, ParameterList& out) {
  const std::string base(name);
  for (std::size_t g = 0; g < 4; ++g) {
    const std::string sfx = kGateSuffix[g];
    out.add(base + ".A_" + sfx, cell.input_weight[g]);
    out.add(base + ".U_" + sfx, cell.recurrent_weight[g]);
    out.add(base + ".b_" + sfx, cell.bias[g]);
  }
}

}  // namespace mfd
