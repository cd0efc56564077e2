#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "mfdelay/layers.hpp"

namespace mfd {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const OptimizerSettings&) const = default;
};

/// First-order update over a fixed ParameterList.
///
/// Adam moment buffers are sized on the first step and must keep matching
/// the parameter shapes afterwards.
class Optimizer {
 public:
  explicit Optimizer(OptimizerSettings settings);

  /// Applies one update using the gradients currently stored on `params`.
  /// Throws UsageError if any parameter has no gradient.
  void step(ParameterList& params);

  const OptimizerSettings& settings() const noexcept { return settings_; }
  long steps() const noexcept { return steps_; }

 private:
  OptimizerSettings settings_;
  long steps_ = 0;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
};

}  // namespace mfd
