#include "mfdelay/optimizer.hpp"

#include <cmath>

#include "mfdelay/errors.hpp"

namespace mfd {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw UsageError("unknown optimizer '" + std::string(name) + "'");
}

Optimizer::Optimizer(OptimizerSettings settings) : settings_(settings) {
  if (!(settings_.learning_rate > 0.0)) throw UsageError("learning rate must be positive");
  if (settings_.kind == OptimizerKind::adam) {
    if (!(settings_.beta1 >= 0.0 && settings_.beta1 < 1.0) ||
        !(settings_.beta2 >= 0.0 && settings_.beta2 < 1.0) || !(settings_.epsilon > 0.0)) {
      throw UsageError("adam requires 0 <= beta < 1 and epsilon > 0");
    }
  }
}

void Optimizer::step(ParameterList& params) {
  for (const auto& p : params) {
    if (!p.var.has_grad()) throw UsageError("parameter " + p.name + " has no gradient");
  }
  const double lr = settings_.learning_rate;
  ++steps_;

  if (settings_.kind == OptimizerKind::sgd) {
    for (auto& p : params) {
      auto& v = p.var.mutable_value().storage();
      const auto g = p.var.grad();
      for (std::size_t k = 0; k < v.size(); ++k) v[k] -= lr * g[k];
    }
    return;
  }

  if (first_moment_.empty()) {
    for (const auto& p : params) {
      first_moment_.emplace_back(p.var.value().size(), 0.0);
      second_moment_.emplace_back(p.var.value().size(), 0.0);
    }
  }
  if (first_moment_.size() != params.size()) {
    throw UsageError("optimizer state was built for a different parameter list");
  }
  const double b1 = settings_.beta1, b2 = settings_.beta2, eps = settings_.epsilon;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = params[i].var.mutable_value().storage();
    const auto g = params[i].var.grad();
    auto& m = first_moment_[i];
    auto& s = second_moment_[i];
    if (m.size() != v.size()) {
      throw UsageError("moment buffer shape mismatch for " + params[i].name);
    }
    for (std::size_t k = 0; k < v.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      s[k] = b2 * s[k] + (1.0 - b2) * g[k] * g[k];
      v[k] -= lr * (m[k] / c1) / (std::sqrt(s[k] / c2) + eps);
    }
  }
}

}  // namespace mfd
