#pragma once

#include <vector>

#include "mfdelay/sdde.hpp"

namespace mfd {

/// Monte Carlo estimate of the cost with the trapezoidal rule in time:
///
///   J = dt * (f_0/2 + f_1 + ... + f_{N-1} + f_N/2) + c_t/2 * mean((X_N - Xbar_N)^2),
///   f_i = mean(alpha_i^2 / 2 + c_f/2 * (X_i - Xbar_i)^2).
///
/// Differentiable through the controls, the states and the batch means.
ad::Var discretized_objective(const Trajectory& traj, const ModelParams& params,
                              const TimeGrid& grid);

/// Same estimate on plain data.
double objective_value(const BatchState& state, const ModelParams& params, const TimeGrid& grid);

/// Per-path terms whose average is objective_value(); used for standard errors.
std::vector<double> objective_per_path(const BatchState& state, const ModelParams& params,
                                       const TimeGrid& grid);

}  // namespace mfd
