#pragma once

#include <optional>
#include <vector>

#include "mfdelay/sdde.hpp"

namespace mfd {

/// phi(t_i) on the grid for phi' = phi^2 - c_f, phi(T) = c_t.
struct RiccatiSolution {
  std::vector<double> phi;
  double c_f = 0.0;
  double c_t = 0.0;
  double horizon = 0.0;
  /// max |phi' - (phi^2 - c_f)| with phi' from central differences on
  /// interior nodes.
  double residual = 0.0;

  std::size_t steps() const noexcept { return phi.empty() ? 0 : phi.size() - 1; }
};

/// Classical RK4 integrated backward from T with the grid step. Throws
/// DomainError if |phi| exceeds 1e6.
RiccatiSolution solve_riccati(const ModelParams& params, const TimeGrid& grid);
RiccatiSolution solve_riccati(double c_f, double c_t, double horizon, std::size_t steps);

/// -phi (x - mean).
constexpr double analytic_control(double x, double mean, double phi) noexcept {
  return -phi * (x - mean);
}

/// phi sigma.
constexpr double analytic_z(double phi, double sigma) noexcept { return phi * sigma; }

/// No-delay batch under the control -phi_t (X_t - Xbar_t), with the matching
/// adjoint Y = phi (X - Xbar), Z = phi sigma and EY = 0.
BatchState simulate_analytic(const RiccatiSolution& riccati, const BrownianBatch& noise,
                             const ModelParams& params, const TimeGrid& grid);

struct Estimate {
  double value = 0.0;
  double stderr_ = 0.0;
};

struct ValidationReport {
  Estimate slope;      // target -phi
  Estimate intercept;  // target 0
  /// Mean over steps 0..N-1 of |mean_j Z_ij - phi_i sigma|; empty without an adjoint.
  std::optional<Estimate> z_mean_abs_err;
  std::vector<double> z_mean;  // per step
  std::vector<double> z_std;   // per step, across paths
  Estimate value_gap;          // J(learned) - J(analytic) on the same noise
  double learned_objective = 0.0;
  double analytic_objective = 0.0;
};

/// Compares a learned no-delay batch with the analytic solution on the same
/// noise. Throws UsageError when the grid has a delay.
ValidationReport validate_nodelay(const BatchState& learned, const RiccatiSolution& riccati,
                                  const BrownianBatch& noise, const ModelParams& params,
                                  const TimeGrid& grid);

}  // namespace mfd
