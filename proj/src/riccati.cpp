#include "mfdelay/riccati.hpp"

#include <cmath>

#include "mfdelay/errors.hpp"
#include "mfdelay/objective.hpp"

namespace mfd {

RiccatiSolution solve_riccati(double c_f, double c_t, double horizon, std::size_t steps) {
  if (!(c_f > 0.0)) throw DomainError("Riccati equation needs c_f > 0");
  if (steps == 0 && horizon != 0.0) throw UsageError("zero steps on a positive horizon");
  RiccatiSolution sol;
  sol.c_f = c_f;
  sol.c_t = c_t;
  sol.horizon = horizon;
  sol.phi.assign(steps + 1, 0.0);
  sol.phi[steps] = c_t;
  if (steps == 0) return sol;

  // s = T - t turns the terminal-value problem into dphi/ds = c_f - phi^2.
  const double h = horizon / static_cast<double>(steps);
  const auto rhs = [c_f](double p) { return c_f - p * p; };
  double p = c_t;
  for (std::size_t k = steps; k-- > 0;) {
    const double k1 = rhs(p);
    const double k2 = rhs(p + 0.5 * h * k1);
    const double k3 = rhs(p + 0.5 * h * k2);
    const double k4 = rhs(p + h * k3);
    p += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!std::isfinite(p) || std::abs(p) > 1e6) {
      throw DomainError("Riccati solution blew up at t = " +
                        std::to_string(static_cast<double>(k) * h));
    }
    sol.phi[k] = p;
  }
  for (std::size_t i = 1; i < steps; ++i) {
    const double dphi = (sol.phi[i + 1] - sol.phi[i - 1]) / (2.0 * h);
    sol.residual = std::max(sol.residual, std::abs(dphi - (sol.phi[i] * sol.phi[i] - c_f)));
  }
  return sol;
}

RiccatiSolution solve_riccati(const ModelParams& params, const TimeGrid& grid) {
  return solve_riccati(params.c_f, params.c_t, grid.horizon, grid.steps);
}

BatchState simulate_analytic(const RiccatiSolution& riccati, const BrownianBatch& noise,
                             const ModelParams& params, const TimeGrid& grid) {
  if (grid.delay_steps != 0) throw UsageError("the analytic solution covers the no-delay case only");
  const std::size_t m = noise.paths(), n = grid.steps;
  if (riccati.steps() != n || noise.steps() != n) {
    throw ShapeError("Riccati solution, noise and grid disagree on the step count");
  }
  BatchState s;
  s.x = Tensor(Shape{m, n + 1});
  s.alpha = Tensor(Shape{m, n + 1});
  s.xbar = Tensor(Shape{n + 1});
  s.y = Tensor(Shape{m, n + 1});
  s.y_label = Tensor(Shape{m, n + 1});
  s.ey = Tensor(Shape{m, n + 1});
  s.z = Tensor(Shape{m, n + 1});
  std::vector<double> x(m, params.x0);
  const double vol = params.sigma * std::sqrt(grid.dt);
  for (std::size_t i = 0; i <= n; ++i) {
    const double mean = batch_mean(x);
    s.xbar[i] = mean;
    const double phi = riccati.phi[i];
    for (std::size_t j = 0; j < m; ++j) {
      s.x.at(j, i) = x[j];
      s.alpha.at(j, i) = analytic_control(x[j], mean, phi);
      s.y.at(j, i) = phi * (x[j] - mean);
      s.z.at(j, i) = analytic_z(phi, params.sigma);
      s.y_label.at(j, i) =
          i == 0 ? s.y.at(j, 0)
                 : s.y.at(j, i - 1) -
                       params.c_f * (s.x.at(j, i - 1) - s.xbar[i - 1]) * grid.dt +
                       s.z.at(j, i - 1) * std::sqrt(grid.dt) * noise.increments.at(j, i - 1);
    }
    if (i == n) break;
    for (std::size_t j = 0; j < m; ++j) {
      x[j] += s.alpha.at(j, i) * grid.dt + vol * noise.increments.at(j, i);
    }
  }
  return s;
}

ValidationReport validate_nodelay(const BatchState& learned, const RiccatiSolution& riccati,
                                  const BrownianBatch& noise, const ModelParams& params,
                                  const TimeGrid& grid) {
  if (grid.delay_steps != 0 || learned.delay_steps != 0) {
    throw UsageError("validate_nodelay called on a delayed instance");
  }
  const std::size_t m = learned.paths(), n = grid.steps;
  if (learned.steps() != n || noise.paths() != m) {
    throw ShapeError("learned batch does not match the noise and grid");
  }
  ValidationReport rep;

  // Pooled least squares of alpha on (X - Xbar).
  double su = 0.0, sa = 0.0;
  const double count = static_cast<double>(m * (n + 1));
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i <= n; ++i) {
      su += learned.x.at(j, i) - learned.xbar[i];
      sa += learned.alpha_at(j, static_cast<long>(i));
    }
  }
  const double mu = su / count, ma = sa / count;
  double suu = 0.0, sua = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i <= n; ++i) {
      const double u = learned.x.at(j, i) - learned.xbar[i] - mu;
      suu += u * u;
      sua += u * (learned.alpha_at(j, static_cast<long>(i)) - ma);
    }
  }
  const double slope = suu > 0.0 ? sua / suu : 0.0;
  const double intercept = ma - slope * mu;
  double sse = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i <= n; ++i) {
      const double u = learned.x.at(j, i) - learned.xbar[i];
      const double r = learned.alpha_at(j, static_cast<long>(i)) - intercept - slope * u;
      sse += r * r;
    }
  }
  const double s2 = count > 2.0 ? sse / (count - 2.0) : 0.0;
  rep.slope = {slope, suu > 0.0 ? std::sqrt(s2 / suu) : 0.0};
  rep.intercept = {intercept, std::sqrt(s2 * (1.0 / count + (suu > 0.0 ? mu * mu / suu : 0.0)))};

  if (learned.has_adjoint()) {
    // Z_N never enters a label, so the comparison stops at N-1.
    double err = 0.0, err_se = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0, ss = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double z = learned.z.at(j, i);
        s += z;
        ss += z * z;
      }
      const double mean = s / static_cast<double>(m);
      const double var = std::max(0.0, ss / static_cast<double>(m) - mean * mean);
      rep.z_mean.push_back(mean);
      rep.z_std.push_back(std::sqrt(var));
      err += std::abs(mean - analytic_z(riccati.phi[i], params.sigma));
      err_se += std::sqrt(var / static_cast<double>(m));
    }
    rep.z_mean_abs_err = Estimate{err / static_cast<double>(n), err_se / static_cast<double>(n)};
  }

  const BatchState reference = simulate_analytic(riccati, noise, params, grid);
  const auto lp = objective_per_path(learned, params, grid);
  const auto ap = objective_per_path(reference, params, grid);
  double mean_d = 0.0, ss_d = 0.0;
  for (std::size_t j = 0; j < m; ++j) mean_d += lp[j] - ap[j];
  mean_d /= static_cast<double>(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double dd = lp[j] - ap[j] - mean_d;
    ss_d += dd * dd;
  }
  rep.learned_objective = batch_mean(lp);
  rep.analytic_objective = batch_mean(ap);
  rep.value_gap = {rep.learned_objective - rep.analytic_objective,
                   m > 1 ? std::sqrt(ss_d / static_cast<double>(m - 1) / static_cast<double>(m))
                         : 0.0};
  return rep;
}

}  // namespace mfd
