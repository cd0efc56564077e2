#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mfdelay/autodiff.hpp"
#include "mfdelay/tensor.hpp"

namespace mfd {

/// Uniform grid on [-tau, T] with dt = T/N = tau/D.
///
/// D = 0 is the no-delay problem: every delayed control term vanishes and
/// there is no anticipated adjoint term.
struct TimeGrid {
  double horizon = 0.0;  // T
  double delay = 0.0;    // tau
  double dt = 0.0;
  std::size_t steps = 0;        // N
  std::size_t delay_steps = 0;  // D

  double time(long i) const noexcept { return static_cast<double>(i) * dt; }
  bool delayed() const noexcept { return delay_steps > 0; }
};

/// Throws ConfigError unless T and tau are integer multiples of dt (1e-9
/// relative) and D <= N.
TimeGrid make_grid(double horizon, double delay, double dt);

/// Coefficients of the linear-quadratic problem.
struct ModelParams {
  double x0 = 0.0;
  double sigma = 1.0;
  double c_f = 1.0;  // running cost weight
  double c_t = 1.0;  // terminal cost weight

  /// Strict positivity of sigma, c_f and c_t, as required of a configured model.
  void validate() const;
  bool operator==(const ModelParams&) const = default;
};

/// M x N standard normal increments; the physical increment is sqrt(dt) * dW.
struct BrownianBatch {
  Tensor increments;  // [M x N]
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  std::size_t paths() const noexcept { return increments.rows(); }
  std::size_t steps() const noexcept { return increments.cols(); }
  /// Column i as an [M x 1] tensor.
  Tensor column(std::size_t i) const;
  /// Increment that ends at t_i, i.e. column i-1, and zeros for i = 0.
  Tensor realized_column(std::size_t i) const;
};

/// Draws from a counter-based stream addressed by (seed, stream, path, step):
/// row j is identical for every M > j.
BrownianBatch sample_increments(std::size_t paths, const TimeGrid& grid, std::uint64_t seed,
                                std::uint64_t stream = 0);

/// x + (a_now - a_delayed) dt + sigma sqrt(dt) dW on [M x 1] columns. An
/// undefined `a_delayed` is the zero control.
ad::Var euler_forward_step(const ad::Var& x, const ad::Var& a_now, const ad::Var& a_delayed,
                           const ad::Var& dw, const ModelParams& params, const TimeGrid& grid);

/// Arithmetic mean over the batch, as a scalar.
ad::Var batch_mean(const ad::Var& values);
double batch_mean(std::span<const double> values);

/// Plain-data snapshot of a simulated batch.
struct BatchState {
  std::size_t delay_steps = 0;
  Tensor x;      // [M x (N+1)]
  Tensor alpha;  // [M x (N+D+1)], column k is step k - D; zeros before step 0
  Tensor xbar;   // [N+1]
  Tensor y;      // optional adjoint columns, [M x (N+1)] when present
  Tensor y_label;
  Tensor ey;
  Tensor z;

  std::size_t paths() const noexcept { return x.rows(); }
  std::size_t steps() const noexcept { return x.cols() - 1; }
  bool has_adjoint() const noexcept { return !y.empty(); }
  /// Control of path j at step i, for i in [-D, N].
  double alpha_at(std::size_t j, long i) const;
};

/// Differentiable record of a rollout: one [M x 1] column per step.
struct Trajectory {
  std::vector<ad::Var> x;      // steps 0..N
  std::vector<ad::Var> alpha;  // steps 0..N
  std::vector<ad::Var> xbar;   // scalars, steps 0..N
  std::vector<ad::Var> y;
  std::vector<ad::Var> y_label;  // entry 0 is Y_0 (no label exists there)
  std::vector<ad::Var> ey;
  std::vector<ad::Var> z;

  BatchState snapshot(std::size_t delay_steps) const;
};

/// Zero-control simulation, used for statistics checks.
BatchState simulate_uncontrolled(const BrownianBatch& noise, const ModelParams& params,
                                 const TimeGrid& grid);

/// Rows `path_id,step,t,X,alpha` plus `Y,EY,Z,Ytilde` when the adjoint is present,
/// 17 significant digits. `max_paths` = 0 writes every path.
void write_trajectories_csv(std::ostream& out, const BatchState& state, const TimeGrid& grid,
                            std::size_t max_paths = 0);

}  // namespace mfd
