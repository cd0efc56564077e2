#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mfdelay/autodiff.hpp"
#include "mfdelay/counter_rng.hpp"
#include "mfdelay/layers.hpp"

namespace mfd::testing {

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Overwrites every parameter, biases included, with N(0, scale^2) draws.
// Zero biases put ReLU units exactly on their kink at the zero initial
// state, where finite differences mean nothing.
inline void randomize(ParameterList& params, std::uint64_t seed, double scale = 0.5) {
  std::uint64_t k = 0;
  for (auto& p : params) {
    CounterRng rng(seed, ++k);
    auto& buf = p.var.mutable_value().storage();
    for (std::size_t e = 0; e < buf.size(); ++e) buf[e] = scale * rng.normal(e, 0);
  }
}

// Central differences on every scalar of `params` against one reverse pass.
// Elementwise error |g - fd| / max(|g|, |fd|, floor * max(1, |loss|)); the
// floor only matters for gradients that are zero up to the difference
// quotient's roundoff, which grows with |loss|.
inline GradCheck gradcheck(ParameterList& params, const std::function<ad::Var()>& loss,
                           double step = 1e-5, double floor = 1e-6) {
  params.zero_grad();
  const ad::Var base = loss();
  floor *= std::max(1.0, std::abs(base.item()));
  ad::backward(base);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    const auto g = p.var.grad();
    if (g.empty()) {
      analytic.emplace_back(p.var.value().size(), 0.0);
    } else {
      analytic.emplace_back(g.begin(), g.end());
    }
  }
  params.zero_grad();

  GradCheck out;
  ad::NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& buf = params[k].var.mutable_value().storage();
    for (std::size_t e = 0; e < buf.size(); ++e) {
      const double saved = buf[e];
      buf[e] = saved + step;
      const double up = loss().item();
      buf[e] = saved - step;
      const double down = loss().item();
      buf[e] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double a = analytic[k][e];
      const double denom = std::max({std::abs(a), std::abs(fd), floor});
      out.max_rel_err = std::max(out.max_rel_err, std::abs(a - fd) / denom);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace mfd::testing
