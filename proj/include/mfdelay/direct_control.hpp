#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mfdelay/layers.hpp"
#include "mfdelay/optimizer.hpp"
#include "mfdelay/sdde.hpp"

namespace mfd {

struct NetworkSizes {
  std::size_t lstm_hidden = 128;
  std::vector<std::size_t> ffn_hidden = {64, 128, 64};

  bool operator==(const NetworkSizes&) const = default;
};

struct InputOptions {
  /// Feed t/T instead of t to the networks.
  bool scale_time = true;
  /// Append t/T to the feedforward policy input (D+2 features instead of D+1).
  bool append_time = false;

  bool operator==(const InputOptions&) const = default;
};

/// Everything a training run needs besides the network kind.
struct TrainConfig {
  TimeGrid grid;
  ModelParams model;
  std::size_t epochs = 500;
  std::size_t batch_size = 4000;
  OptimizerSettings optimizer;
  std::uint64_t seed = 1;
  NetworkSizes sizes;
  InputOptions inputs;
  /// Reuse one noise batch for every epoch instead of drawing fresh paths.
  bool fixed_batch = false;
  /// Direct methods stop once the gradient norm drops below this.
  double grad_tol = 1e-4;
  /// Adjoint methods stop once L1 is below `l1_tol` and L2 has plateaued:
  /// the means of the last two `plateau_window` epochs differ by less than
  /// `plateau_rtol` relative.
  double l1_tol = 1e-3;
  std::size_t plateau_window = 50;
  double plateau_rtol = 1e-3;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double objective = 0.0;  // J on the training batch
  double grad_norm = 0.0;
  double l1 = std::numeric_limits<double>::quiet_NaN();
  double l2 = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHistory {
  std::vector<EpochRecord> records;
  std::string stop_reason = "budget";
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Noise for training epoch `epoch` (stream epoch+1; stream 0 is left for
/// evaluation batches).
BrownianBatch training_noise(const TrainConfig& cfg, std::size_t epoch);

enum class DirectKind { lstm_on_noise, ffn_on_state_history };

std::string to_string(DirectKind k);

/// Open-loop control network.
///
/// lstm_on_noise reads (time, latest realized increment) at every step and
/// maps the LSTM output to the control with a linear head.
/// ffn_on_state_history maps (X_i, alpha_{i-D}, ..., alpha_{i-1}) through a
/// ReLU network.
struct DirectPolicy {
  DirectKind kind = DirectKind::lstm_on_noise;
  InputOptions inputs;
  LstmCell cell;
  DenseLayer head;
  Mlp net;

  ParameterList parameters() const;
};

DirectPolicy make_direct_policy(DirectKind kind, const NetworkSizes& sizes,
                                const InputOptions& inputs, const TimeGrid& grid,
                                std::uint64_t seed);

/// Recurrent input at step i: (time feature, increment ending at t_i), [M x 2].
Tensor noise_features(const BrownianBatch& noise, const TimeGrid& grid, std::size_t step,
                      bool scale_time);

/// Simulates the controlled batch, recording the full graph.
Trajectory policy_rollout(const DirectPolicy& policy, const BrownianBatch& noise,
                          const ModelParams& params, const TimeGrid& grid);

struct DirectResult {
  DirectPolicy policy;
  TrainHistory history;
};

/// Minimizes the discretized objective by backpropagation through time.
/// Throws DivergenceError when J turns non-finite or exceeds ten times its
/// first value.
DirectResult train_direct(const TrainConfig& cfg, DirectKind kind,
                          const EpochCallback& on_epoch = {});

/// Continues training an existing policy.
TrainHistory train_direct(DirectPolicy& policy, const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {});

}  // namespace mfd
