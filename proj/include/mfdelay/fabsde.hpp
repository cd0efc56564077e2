#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mfdelay/direct_control.hpp"

namespace mfd {

enum class AdjointKind { three_lstm, shared_lstm_heads };

std::string to_string(AdjointKind k);

enum AdjointHead : std::size_t { kHeadY = 0, kHeadEY = 1, kHeadZ = 2 };

/// Networks for Y_t, E[Y_{t+tau} | F_t] and Z_t, all driven by
/// (time, latest realized increment).
///
/// three_lstm: one LSTM and linear head per quantity.
/// shared_lstm_heads: one LSTM trunk feeding three ReLU heads.
struct AdjointNets {
  AdjointKind kind = AdjointKind::three_lstm;
  InputOptions inputs;
  std::vector<LstmCell> cells;     // 3 for three_lstm, 1 for the shared trunk
  std::array<DenseLayer, 3> heads;  // three_lstm
  std::array<Mlp, 3> head_nets;     // shared_lstm_heads

  /// Parameters trained on L1: everything that produces Y and Z.
  ParameterList primary_parameters() const;
  /// Parameters trained on L2: the conditional-expectation head.
  ParameterList expectation_parameters() const;
  ParameterList parameters() const;
};

AdjointNets make_adjoint_nets(AdjointKind kind, const NetworkSizes& sizes,
                              const InputOptions& inputs, std::uint64_t seed);

/// One backward Euler step for the adjoint:
/// y - c_f (x - xbar) dt + z sqrt(dt) dW.
ad::Var backward_euler_label(const ad::Var& y, const ad::Var& x, const ad::Var& xbar,
                             const ad::Var& z, const ad::Var& dw, const ModelParams& params,
                             const TimeGrid& grid);

/// Optimal control from the adjoint: -y + ey.
ad::Var recover_control(const ad::Var& y, const ad::Var& ey);

struct FabsdeLosses {
  ad::Var l1;  // label consistency plus terminal match
  ad::Var l2;  // conditional-expectation regression, labels detached
};

struct CoupledRollout {
  Trajectory trajectory;
  FabsdeLosses losses;
};

/// Simulates the forward state and the adjoint labels together.
///
/// EY is forced to zero after step N-D (and everywhere when D = 0), since Y
/// vanishes beyond the horizon. L1 compares network and label from step 1 on;
/// L2 regresses EY_i on the detached label at step i+D for i <= N-D.
CoupledRollout coupled_rollout(const AdjointNets& nets, const BrownianBatch& noise,
                               const ModelParams& params, const TimeGrid& grid);

struct FabsdeResult {
  AdjointNets nets;
  TrainHistory history;
};

/// Per epoch: one shared rollout, a step on L1 for the Y/Z parameters, then
/// a step on L2 for the EY parameters.
FabsdeResult train_fabsde(const TrainConfig& cfg, AdjointKind kind,
                          const EpochCallback& on_epoch = {});
TrainHistory train_fabsde(AdjointNets& nets, const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------- E[label_{t+D} | F_t]

/// LSTM regressor on (time, latest realized increment) with a linear head.
struct ExpectationRegressor {
  LstmCell cell;
  DenseLayer head;
  bool scale_time = true;

  ParameterList parameters() const;
};

ExpectationRegressor make_expectation_regressor(std::size_t hidden, std::uint64_t seed);

/// Label process as a function of the noise, [M x (N+1)].
using LabelProcess = std::function<Tensor(const BrownianBatch&, const TimeGrid&)>;

struct ExpectationFitConfig {
  TimeGrid grid;
  std::size_t batch_size = 512;
  std::size_t epochs = 300;
  OptimizerSettings optimizer{OptimizerKind::adam, 1e-2};
  std::uint64_t seed = 1;
};

/// Fitted values for steps 0..N-D, [M x (N-D+1)].
Tensor predict_expectation(const ExpectationRegressor& reg, const BrownianBatch& noise,
                           const TimeGrid& grid);

/// (1/M) sum_j sum_{i <= N-D} (EY_i - label_{i+D})^2.
ad::Var expectation_loss(const ExpectationRegressor& reg, const BrownianBatch& noise,
                         const Tensor& labels, const TimeGrid& grid);

/// Least-squares fit of E[label_{t+D} | F_t] on fresh batches; returns the
/// per-epoch loss.
std::vector<double> conditional_expectation_fit(ExpectationRegressor& reg,
                                                const LabelProcess& labels,
                                                const ExpectationFitConfig& cfg);

}  // namespace mfd
