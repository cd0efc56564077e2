#include "mfdelay/sdde.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "mfdelay/counter_rng.hpp"
#include "mfdelay/errors.hpp"

namespace mfd {

namespace {

std::size_t whole_steps(double length, double dt, const char* what) {
  const double ratio = length / dt;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s = %.17g is not a multiple of dt = %.17g (%.17g steps)",
                  what, length, dt, ratio);
    throw ConfigError(buf);
  }
  return static_cast<std::size_t>(rounded);
}

void require_column(const ad::Var& v, std::size_t m, const char* what) {
  if (!v.defined()) throw UsageError(std::string(what) + " is undefined");
  if (v.rows() != m || v.cols() != 1) {
    throw ShapeError(std::string(what) + " has shape " + shape_string(v.shape()) +
                     ", expected [" + std::to_string(m) + " x 1]");
  }
}

void fill_columns(Tensor& dst, const std::vector<ad::Var>& cols) {
  if (cols.empty()) return;
  const std::size_t m = cols.front().rows();
  dst = Tensor(Shape{m, cols.size()});
  for (std::size_t i = 0; i < cols.size(); ++i) {
    const Tensor& c = cols[i].value();
    for (std::size_t j = 0; j < m; ++j) dst.at(j, i) = c[j];
  }
}

}  // namespace

TimeGrid make_grid(double horizon, double delay, double dt) {
  if (!(horizon > 0.0)) throw ConfigError("horizon T must be positive");
  if (!(delay >= 0.0)) throw ConfigError("delay tau must be non-negative");
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  TimeGrid g;
  g.horizon = horizon;
  g.delay = delay;
  g.dt = dt;
  g.steps = whole_steps(horizon, dt, "T");
  g.delay_steps = whole_steps(delay, dt, "tau");
  if (g.steps < 1) throw ConfigError("grid needs at least one step");
  if (g.delay_steps > g.steps) {
    throw ConfigError("delay tau = " + std::to_string(delay) +
                      " exceeds the horizon; use tau = 0 for the no-delay problem");
  }
  return g;
}

void ModelParams::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (!(c_f > 0.0)) throw ConfigError("c_f must be positive");
  if (!(c_t > 0.0)) throw ConfigError("c_t must be positive");
  if (!std::isfinite(x0)) throw ConfigError("x0 must be finite");
}

Tensor BrownianBatch::column(std::size_t i) const {
  const std::size_t m = paths(), n = steps();
  if (i >= n) throw UsageError("increment column " + std::to_string(i) + " out of range");
  Tensor c(Shape{m, 1});
  for (std::size_t j = 0; j < m; ++j) c[j] = increments[j * n + i];
  return c;
}

Tensor BrownianBatch::realized_column(std::size_t i) const {
  if (i == 0) return Tensor(Shape{paths(), 1});
  return column(i - 1);
}

BrownianBatch sample_increments(std::size_t paths, const TimeGrid& grid, std::uint64_t seed,
                                std::uint64_t stream) {
  if (paths < 1) throw UsageError("batch size must be at least 1");
  const CounterRng rng(seed, stream);
  BrownianBatch b;
  b.seed = seed;
  b.stream = stream;
  b.increments = Tensor(Shape{paths, grid.steps});
  for (std::size_t j = 0; j < paths; ++j) {
    for (std::size_t i = 0; i < grid.steps; ++i) b.increments.at(j, i) = rng.normal(j, i);
  }
  return b;
}

ad::Var euler_forward_step(const ad::Var& x, const ad::Var& a_now, const ad::Var& a_delayed,
                           const ad::Var& dw, const ModelParams& params, const TimeGrid& grid) {
  const std::size_t m = x.rows();
  require_column(x, m, "state");
  require_column(a_now, m, "control");
  require_column(dw, m, "increment");
  ad::Var drift = a_now;
  if (a_delayed.defined()) {
    require_column(a_delayed, m, "delayed control");
    drift = a_now - a_delayed;
  }
  return x + drift * grid.dt + dw * (params.sigma * std::sqrt(grid.dt));
}

ad::Var batch_mean(const ad::Var& values) {
  if (!values.defined() || values.value().empty()) throw UsageError("batch mean of an empty batch");
  return ad::mean(values);
}

double batch_mean(std::span<const double> values) {
  if (values.empty()) throw UsageError("batch mean of an empty batch");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double BatchState::alpha_at(std::size_t j, long i) const {
  const long col = i + static_cast<long>(delay_steps);
  if (col < 0 || static_cast<std::size_t>(col) >= alpha.cols()) {
    throw UsageError("control index " + std::to_string(i) + " out of range");
  }
  return alpha.at(j, static_cast<std::size_t>(col));
}

BatchState Trajectory::snapshot(std::size_t delay_steps) const {
  if (x.empty() || alpha.size() != x.size() || xbar.size() != x.size()) {
    throw UsageError("trajectory is incomplete");
  }
  BatchState s;
  s.delay_steps = delay_steps;
  fill_columns(s.x, x);
  const std::size_t m = s.x.rows(), n1 = x.size();
  s.alpha = Tensor(Shape{m, n1 + delay_steps});
  for (std::size_t i = 0; i < n1; ++i) {
    const Tensor& a = alpha[i].value();
    for (std::size_t j = 0; j < m; ++j) s.alpha.at(j, i + delay_steps) = a[j];
  }
  s.xbar = Tensor(Shape{n1});
  for (std::size_t i = 0; i < n1; ++i) s.xbar[i] = xbar[i].item();
  fill_columns(s.y, y);
  fill_columns(s.y_label, y_label);
  fill_columns(s.ey, ey);
  fill_columns(s.z, z);
  return s;
}

BatchState simulate_uncontrolled(const BrownianBatch& noise, const ModelParams& params,
                                 const TimeGrid& grid) {
  ad::NoGradGuard no_grad;
  const std::size_t m = noise.paths();
  Trajectory tr;
  const ad::Var zero = ad::constant(Tensor(Shape{m, 1}));
  ad::Var x = ad::constant(Tensor(Shape{m, 1}, params.x0));
  for (std::size_t i = 0; i <= grid.steps; ++i) {
    tr.x.push_back(x);
    tr.alpha.push_back(zero);
    tr.xbar.push_back(batch_mean(x));
    if (i == grid.steps) break;
    x = euler_forward_step(x, zero, grid.delayed() ? zero : ad::Var{},
                           ad::constant(noise.column(i)), params, grid);
  }
  return tr.snapshot(grid.delay_steps);
}

void write_trajectories_csv(std::ostream& out, const BatchState& state, const TimeGrid& grid,
                            std::size_t max_paths) {
  const bool adjoint = state.has_adjoint();
  out << "path_id,step,t,X,alpha";
  if (adjoint) out << ",Y,EY,Z,Ytilde";
  out << '\n';
  const std::size_t m = max_paths == 0 ? state.paths() : std::min(max_paths, state.paths());
  char buf[64];
  const auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    out << buf;
  };
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i <= state.steps(); ++i) {
      out << j << ',' << i;
      put(grid.time(static_cast<long>(i)));
      put(state.x.at(j, i));
      put(state.alpha_at(j, static_cast<long>(i)));
      if (adjoint) {
        put(state.y.at(j, i));
        put(state.ey.at(j, i));
        put(state.z.at(j, i));
        put(state.y_label.at(j, i));
      }
      out << '\n';
    }
  }
  if (!out) throw IoError("failed writing trajectory CSV");
}

}  // namespace mfd
