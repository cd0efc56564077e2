#include "mfdelay/direct_control.hpp"

#include <cmath>

#include "mfdelay/errors.hpp"
#include "mfdelay/objective.hpp"

namespace mfd {

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch size M must be at least 2");
  if (grid.steps < 1) throw ConfigError("grid has no steps");
  if (sizes.lstm_hidden == 0) throw ConfigError("lstm_hidden must be positive");
  for (std::size_t h : sizes.ffn_hidden) {
    if (h == 0) throw ConfigError("ffn_hidden sizes must be positive");
  }
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (plateau_window == 0) throw ConfigError("plateau_window must be positive");
}

BrownianBatch training_noise(const TrainConfig& cfg, std::size_t epoch) {
  return sample_increments(cfg.batch_size, cfg.grid, cfg.seed, cfg.fixed_batch ? 1 : epoch + 1);
}

std::string to_string(DirectKind k) {
  return k == DirectKind::lstm_on_noise ? "lstm_on_noise" : "ffn_on_state_history";
}

ParameterList DirectPolicy::parameters() const {
  ParameterList p;
  if (kind == DirectKind::lstm_on_noise) {
    collect(cell, "policy.lstm", p);
    collect(head, "policy.head", p);
  } else {
    collect(net, "policy.ffn", p);
  }
  return p;
}

DirectPolicy make_direct_policy(DirectKind kind, const NetworkSizes& sizes,
                                const InputOptions& inputs, const TimeGrid& grid,
                                std::uint64_t seed) {
  DirectPolicy p;
  p.kind = kind;
  p.inputs = inputs;
  if (kind == DirectKind::lstm_on_noise) {
    p.cell = make_lstm(2, sizes.lstm_hidden, seed, "policy.lstm");
    p.head = make_dense(sizes.lstm_hidden, 1, Activation::identity, seed, "policy.head");
  } else {
    const std::size_t in = grid.delay_steps + 1 + (inputs.append_time ? 1 : 0);
    p.net = make_mlp(in, sizes.ffn_hidden, 1, seed, "policy.ffn");
  }
  return p;
}

Tensor noise_features(const BrownianBatch& noise, const TimeGrid& grid, std::size_t step,
                      bool scale_time) {
  const std::size_t m = noise.paths();
  const double t = grid.time(static_cast<long>(step));
  const double tf = scale_time ? t / grid.horizon : t;
  Tensor in(Shape{m, 2});
  const std::size_t n = noise.steps();
  for (std::size_t j = 0; j < m; ++j) {
    in[2 * j] = tf;
    in[2 * j + 1] = step == 0 ? 0.0 : noise.increments[j * n + step - 1];
  }
  return in;
}

Trajectory policy_rollout(const DirectPolicy& policy, const BrownianBatch& noise,
                          const ModelParams& params, const TimeGrid& grid) {
  const std::size_t m = noise.paths(), n = grid.steps, d = grid.delay_steps;
  if (noise.steps() != n) {
    throw ShapeError("noise has " + std::to_string(noise.steps()) + " steps, grid has " +
                     std::to_string(n));
  }
  if (policy.kind == DirectKind::ffn_on_state_history) {
    const std::size_t want = d + 1 + (policy.inputs.append_time ? 1 : 0);
    if (policy.net.in_dim() != want) {
      throw ShapeError("feedforward policy expects " + std::to_string(policy.net.in_dim()) +
                       " inputs, grid requires " + std::to_string(want));
    }
  }

  const ad::Var zero = ad::constant(Tensor(Shape{m, 1}));
  const auto delayed = [&](const Trajectory& tr, std::size_t i) -> ad::Var {
    if (d == 0) return {};
    return i >= d ? tr.alpha[i - d] : zero;
  };

  Trajectory tr;
  LstmState state;
  ad::Var x = ad::constant(Tensor(Shape{m, 1}, params.x0));
  for (std::size_t i = 0; i <= n; ++i) {
    tr.x.push_back(x);
    tr.xbar.push_back(batch_mean(x));

    ad::Var alpha;
    if (policy.kind == DirectKind::lstm_on_noise) {
      state = lstm_step(policy.cell,
                        ad::constant(noise_features(noise, grid, i, policy.inputs.scale_time)),
                        state);
      alpha = dense_forward(policy.head, state.hidden);
    } else {
      std::vector<ad::Var> parts;
      parts.reserve(d + 2);
      parts.push_back(x);
      for (std::size_t k = d; k >= 1; --k) {
        parts.push_back(i >= k ? tr.alpha[i - k] : zero);
      }
      if (policy.inputs.append_time) {
        parts.push_back(ad::constant(Tensor(Shape{m, 1}, grid.time(static_cast<long>(i)) /
                                                             grid.horizon)));
      }
      alpha = mlp_forward(policy.net, parts.size() == 1 ? x : ad::concat_cols(parts));
    }
    tr.alpha.push_back(alpha);
    if (i == n) break;
    x = euler_forward_step(x, alpha, delayed(tr, i), ad::constant(noise.column(i)), params, grid);
  }
  return tr;
}

TrainHistory train_direct(DirectPolicy& policy, const TrainConfig& cfg,
                          const EpochCallback& on_epoch) {
  cfg.validate();
  ParameterList params = policy.parameters();
  Optimizer opt(cfg.optimizer);
  TrainHistory hist;
  double first_j = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const BrownianBatch noise = training_noise(cfg, epoch);
    params.zero_grad();
    const ad::Var j = discretized_objective(policy_rollout(policy, noise, cfg.model, cfg.grid),
                                            cfg.model, cfg.grid);
    const double jv = j.item();
    if (epoch == 0) first_j = jv;
    if (!std::isfinite(jv) || (first_j > 0.0 && jv > 10.0 * first_j)) {
      throw DivergenceError("objective diverged at epoch " + std::to_string(epoch) +
                                " (J = " + std::to_string(jv) + ")",
                            static_cast<long>(epoch));
    }
    ad::backward(j);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.objective = jv;
    rec.grad_norm = params.grad_norm();
    hist.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.grad_norm < cfg.grad_tol) {
      hist.stop_reason = "gradient";
      break;
    }
    opt.step(params);
  }
  params.zero_grad();
  return hist;
}

DirectResult train_direct(const TrainConfig& cfg, DirectKind kind, const EpochCallback& on_epoch) {
  cfg.validate();
  DirectResult r{make_direct_policy(kind, cfg.sizes, cfg.inputs, cfg.grid, cfg.seed), {}};
  r.history = train_direct(r.policy, cfg, on_epoch);
  return r;
}

}  // namespace mfd
