#include "mfdelay/fabsde.hpp"

#include <cmath>

#include "mfdelay/errors.hpp"
#include "mfdelay/objective.hpp"

namespace mfd {

namespace {

constexpr std::array<const char*, 3> kHeadName = {"Y", "EY", "Z"};

bool all_finite(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool plateaued(const std::vector<EpochRecord>& recs, std::size_t window, double rtol) {
  if (recs.size() < 2 * window) return false;
  double recent = 0.0, before = 0.0;
  const std::size_t n = recs.size();
  for (std::size_t k = 0; k < window; ++k) {
    recent += recs[n - 1 - k].l2;
    before += recs[n - 1 - window - k].l2;
  }
  if (before == 0.0) return recent == 0.0;
  return std::abs(recent - before) <= rtol * std::abs(before);
}

}  // namespace

std::string to_string(AdjointKind k) {
  return k == AdjointKind::three_lstm ? "three_lstm" : "shared_lstm_heads";
}

ParameterList AdjointNets::primary_parameters() const {
  ParameterList p;
  if (kind == AdjointKind::three_lstm) {
    for (std::size_t h : {kHeadY, kHeadZ}) {
      collect(cells[h], std::string("adjoint.") + kHeadName[h] + ".lstm", p);
      collect(heads[h], std::string("adjoint.") + kHeadName[h] + ".head", p);
    }
  } else {
    collect(cells[0], "adjoint.trunk", p);
    for (std::size_t h : {kHeadY, kHeadZ}) {
      collect(head_nets[h], std::string("adjoint.") + kHeadName[h] + ".ffn", p);
    }
  }
  return p;
}

ParameterList AdjointNets::expectation_parameters() const {
  ParameterList p;
  if (kind == AdjointKind::three_lstm) {
    collect(cells[kHeadEY], "adjoint.EY.lstm", p);
    collect(heads[kHeadEY], "adjoint.EY.head", p);
  } else {
    collect(head_nets[kHeadEY], "adjoint.EY.ffn", p);
  }
  return p;
}

ParameterList AdjointNets::parameters() const {
  ParameterList p = primary_parameters();
  p.append(expectation_parameters());
  return p;
}

AdjointNets make_adjoint_nets(AdjointKind kind, const NetworkSizes& sizes,
                              const InputOptions& inputs, std::uint64_t seed) {
  AdjointNets nets;
  nets.kind = kind;
  nets.inputs = inputs;
  const std::size_t h = sizes.lstm_hidden;
  if (kind == AdjointKind::three_lstm) {
    for (std::size_t k = 0; k < 3; ++k) {
      const std::string base = std::string("adjoint.") + kHeadName[k];
      nets.cells.push_back(make_lstm(2, h, seed, base + ".lstm"));
      nets.heads[k] = make_dense(h, 1, Activation::identity, seed, base + ".head");
    }
  } else {
    nets.cells.push_back(make_lstm(2, h, seed, "adjoint.trunk"));
    for (std::size_t k = 0; k < 3; ++k) {
      nets.head_nets[k] = make_mlp(h, sizes.ffn_hidden, 1, seed,
                                   std::string("adjoint.") + kHeadName[k] + ".ffn");
    }
  }
  return nets;
}

ad::Var backward_euler_label(const ad::Var& y, const ad::Var& x, const ad::Var& xbar,
                             const ad::Var& z, const ad::Var& dw, const ModelParams& params,
                             const TimeGrid& grid) {
  const std::size_t m = y.rows();
  for (const ad::Var* v : {&x, &z, &dw}) {
    if (v->rows() != m || v->cols() != y.cols()) {
      throw ShapeError("backward_euler_label: operand shape " + shape_string(v->shape()) +
                       " does not match " + shape_string(y.shape()));
    }
  }
  if (xbar.value().size() != 1) throw ShapeError("backward_euler_label: xbar must be scalar");
  return y - (params.c_f * grid.dt) * (x - xbar) + (std::sqrt(grid.dt) * z) * dw;
}

ad::Var recover_control(const ad::Var& y, const ad::Var& ey) {
  if (y.shape() != ey.shape()) {
    throw ShapeError("recover_control: " + shape_string(y.shape()) + " vs " +
                     shape_string(ey.shape()));
  }
  return ey - y;
}

CoupledRollout coupled_rollout(const AdjointNets& nets, const BrownianBatch& noise,
                               const ModelParams& params, const TimeGrid& grid) {
  const std::size_t m = noise.paths(), n = grid.steps, d = grid.delay_steps;
  if (noise.steps() != n) {
    throw ShapeError("noise has " + std::to_string(noise.steps()) + " steps, grid has " +
                     std::to_string(n));
  }
  const bool shared = nets.kind == AdjointKind::shared_lstm_heads;
  const ad::Var zero = ad::constant(Tensor(Shape{m, 1}));
  // The anticipated term exists only while t + tau stays inside [0, T].
  const auto ey_active = [&](std::size_t i) { return d > 0 && i + d <= n; };

  CoupledRollout out;
  Trajectory& tr = out.trajectory;
  std::vector<LstmState> states(nets.cells.size());
  ad::Var x = ad::constant(Tensor(Shape{m, 1}, params.x0));
  ad::Var l1, l2;
  const auto accumulate = [](ad::Var& acc, const ad::Var& term) {
    acc = acc.defined() ? acc + term : term;
  };

  for (std::size_t i = 0; i <= n; ++i) {
    const ad::Var input =
        ad::constant(noise_features(noise, grid, i, nets.inputs.scale_time));
    std::array<ad::Var, 3> out_heads;
    if (shared) {
      states[0] = lstm_step(nets.cells[0], input, states[0]);
      for (std::size_t k = 0; k < 3; ++k) {
        if (k == kHeadEY && !ey_active(i)) continue;
        out_heads[k] = mlp_forward(nets.head_nets[k], states[0].hidden);
      }
    } else {
      for (std::size_t k = 0; k < 3; ++k) {
        if (k == kHeadEY && !ey_active(i)) continue;
        states[k] = lstm_step(nets.cells[k], input, states[k]);
        out_heads[k] = dense_forward(nets.heads[k], states[k].hidden);
      }
    }
    const ad::Var y = out_heads[kHeadY];
    const ad::Var z = out_heads[kHeadZ];
    const ad::Var ey = ey_active(i) ? out_heads[kHeadEY] : zero;
    const ad::Var alpha = recover_control(y, ey);
    const ad::Var xbar = batch_mean(x);

    if (i == 0) {
      tr.y_label.push_back(y);
    } else {
      accumulate(l1, ad::mean(ad::square(y - tr.y_label[i])));
    }
    tr.x.push_back(x);
    tr.xbar.push_back(xbar);
    tr.alpha.push_back(alpha);
    tr.y.push_back(y);
    tr.ey.push_back(ey);
    tr.z.push_back(z);

    if (!all_finite(x.value()) || !all_finite(alpha.value()) || !all_finite(z.value())) {
      throw DivergenceError("non-finite state or adjoint at step " + std::to_string(i), -1);
    }
    if (i == n) break;

    const ad::Var dw = ad::constant(noise.column(i));
    const ad::Var a_delayed = d == 0 ? ad::Var{} : (i >= d ? tr.alpha[i - d] : zero);
    tr.y_label.push_back(backward_euler_label(y, x, xbar, z, dw, params, grid));
    x = euler_forward_step(x, alpha, a_delayed, dw, params, grid);
  }

  const ad::Var terminal = tr.y[n] - params.c_t * (tr.x[n] - tr.xbar[n]);
  accumulate(l1, ad::mean(ad::square(terminal)));
  for (std::size_t i = 0; ey_active(i); ++i) {
    accumulate(l2, ad::mean(ad::square(tr.ey[i] - ad::detach(tr.y_label[i + d]))));
  }
  out.losses.l1 = l1;
  out.losses.l2 = l2.defined() ? l2 : ad::constant(Tensor::scalar(0.0));
  return out;
}

TrainHistory train_fabsde(AdjointNets& nets, const TrainConfig& cfg,
                          const EpochCallback& on_epoch) {
  cfg.validate();
  ParameterList primary = nets.primary_parameters();
  ParameterList expect = nets.expectation_parameters();
  ParameterList all = nets.parameters();
  Optimizer opt_primary(cfg.optimizer);
  Optimizer opt_expect(cfg.optimizer);
  const bool has_l2 = cfg.grid.delay_steps > 0;
  TrainHistory hist;
  double first_j = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const BrownianBatch noise = training_noise(cfg, epoch);
    all.zero_grad();
    const CoupledRollout roll = coupled_rollout(nets, noise, cfg.model, cfg.grid);
    double jv;
    {
      ad::NoGradGuard no_grad;
      jv = discretized_objective(roll.trajectory, cfg.model, cfg.grid).item();
    }
    const double l1 = roll.losses.l1.item();
    const double l2 = roll.losses.l2.item();
    if (epoch == 0) first_j = jv;
    if (!std::isfinite(jv) || !std::isfinite(l1) || !std::isfinite(l2) ||
        (first_j > 0.0 && jv > 10.0 * first_j)) {
      throw DivergenceError("adjoint training diverged at epoch " + std::to_string(epoch) +
                                " (J = " + std::to_string(jv) + ", L1 = " + std::to_string(l1) +
                                ")",
                            static_cast<long>(epoch));
    }
    ad::backward(roll.losses.l1);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.objective = jv;
    rec.grad_norm = primary.grad_norm();
    rec.l1 = l1;
    rec.l2 = l2;
    hist.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (l1 < cfg.l1_tol &&
        (!has_l2 || plateaued(hist.records, cfg.plateau_window, cfg.plateau_rtol))) {
      hist.stop_reason = "converged";
      break;
    }

    opt_primary.step(primary);
    if (has_l2) {
      expect.zero_grad();
      ad::backward(roll.losses.l2);
      opt_expect.step(expect);
    }
  }
  all.zero_grad();
  return hist;
}

FabsdeResult train_fabsde(const TrainConfig& cfg, AdjointKind kind, const EpochCallback& on_epoch) {
  cfg.validate();
  FabsdeResult r{make_adjoint_nets(kind, cfg.sizes, cfg.inputs, cfg.seed), {}};
  r.history = train_fabsde(r.nets, cfg, on_epoch);
  return r;
}

// ---------------------------------------------------------------- regressor

ParameterList ExpectationRegressor::parameters() const {
  ParameterList p;
  collect(cell, "regressor.lstm", p);
  collect(head, "regressor.head", p);
  return p;
}

ExpectationRegressor make_expectation_regressor(std::size_t hidden, std::uint64_t seed) {
  ExpectationRegressor r;
  r.cell = make_lstm(2, hidden, seed, "regressor.lstm");
  r.head = make_dense(hidden, 1, Activation::identity, seed, "regressor.head");
  return r;
}

namespace {

std::vector<ad::Var> regressor_outputs(const ExpectationRegressor& reg, const BrownianBatch& noise,
                                       const TimeGrid& grid) {
  const std::size_t last = grid.steps - grid.delay_steps;
  std::vector<ad::Var> out;
  LstmState s;
  for (std::size_t i = 0; i <= last; ++i) {
    s = lstm_step(reg.cell, ad::constant(noise_features(noise, grid, i, reg.scale_time)), s);
    out.push_back(dense_forward(reg.head, s.hidden));
  }
  return out;
}

}  // namespace

Tensor predict_expectation(const ExpectationRegressor& reg, const BrownianBatch& noise,
                           const TimeGrid& grid) {
  ad::NoGradGuard no_grad;
  const auto outs = regressor_outputs(reg, noise, grid);
  const std::size_t m = noise.paths();
  Tensor pred(Shape{m, outs.size()});
  for (std::size_t i = 0; i < outs.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j) pred.at(j, i) = outs[i].value()[j];
  }
  return pred;
}

ad::Var expectation_loss(const ExpectationRegressor& reg, const BrownianBatch& noise,
                         const Tensor& labels, const TimeGrid& grid) {
  const std::size_t m = noise.paths(), d = grid.delay_steps;
  if (labels.rows() != m || labels.cols() != grid.steps + 1) {
    throw ShapeError("labels must be [M x (N+1)], got " + shape_string(labels.shape()));
  }
  const auto outs = regressor_outputs(reg, noise, grid);
  ad::Var loss;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    Tensor target(Shape{m, 1});
    for (std::size_t j = 0; j < m; ++j) target[j] = labels.at(j, i + d);
    const ad::Var term = ad::mean(ad::square(outs[i] - ad::constant(std::move(target))));
    loss = loss.defined() ? loss + term : term;
  }
  return loss;
}

std::vector<double> conditional_expectation_fit(ExpectationRegressor& reg,
                                                const LabelProcess& labels,
                                                const ExpectationFitConfig& cfg) {
  if (cfg.batch_size < 1) throw UsageError("batch size must be at least 1");
  ParameterList params = reg.parameters();
  Optimizer opt(cfg.optimizer);
  std::vector<double> losses;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const BrownianBatch noise = sample_increments(cfg.batch_size, cfg.grid, cfg.seed, epoch + 1);
    params.zero_grad();
    const ad::Var loss = expectation_loss(reg, noise, labels(noise, cfg.grid), cfg.grid);
    const double v = loss.item();
    if (!std::isfinite(v) || (!losses.empty() && v > 10.0 * losses.front())) {
      throw DivergenceError("expectation fit diverged at epoch " + std::to_string(epoch),
                            static_cast<long>(epoch));
    }
    losses.push_back(v);
    ad::backward(loss);
    opt.step(params);
  }
  params.zero_grad();
  return losses;
}

}  // namespace mfd
