#include "mfdelay/objective.hpp"

#include "mfdelay/errors.hpp"

namespace mfd {

ad::Var discretized_objective(const Trajectory& traj, const ModelParams& params,
                              const TimeGrid& grid) {
  const std::size_t n = grid.steps;
  if (traj.x.size() != n + 1 || traj.alpha.size() != n + 1 || traj.xbar.size() != n + 1) {
    throw UsageError("objective needs X, alpha and Xbar on steps 0..N");
  }
  ad::Var running;
  for (std::size_t i = 0; i <= n; ++i) {
    const ad::Var dev = traj.x[i] - traj.xbar[i];
    const ad::Var f = ad::mean(0.5 * ad::square(traj.alpha[i]) +
                               (0.5 * params.c_f) * ad::square(dev));
    const double w = (i == 0 || i == n) ? 0.5 * grid.dt : grid.dt;
    running = running.defined() ? running + w * f : w * f;
  }
  const ad::Var dev_n = traj.x[n] - traj.xbar[n];
  return running + (0.5 * params.c_t) * ad::mean(ad::square(dev_n));
}

std::vector<double> objective_per_path(const BatchState& state, const ModelParams& params,
                                       const TimeGrid& grid) {
  const std::size_t n = grid.steps, m = state.paths();
  if (state.steps() != n || state.xbar.size() != n + 1) {
    throw UsageError("batch state does not match the grid");
  }
  std::vector<double> out(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
      const double a = state.alpha_at(j, static_cast<long>(i));
      const double dev = state.x.at(j, i) - state.xbar[i];
      const double f = 0.5 * a * a + 0.5 * params.c_f * dev * dev;
      acc += ((i == 0 || i == n) ? 0.5 * grid.dt : grid.dt) * f;
    }
    const double dev_n = state.x.at(j, n) - state.xbar[n];
    out[j] = acc + 0.5 * params.c_t * dev_n * dev_n;
  }
  return out;
}

double objective_value(const BatchState& state, const ModelParams& params, const TimeGrid& grid) {
  return batch_mean(objective_per_path(state, params, grid));
}

}  // namespace mfd
