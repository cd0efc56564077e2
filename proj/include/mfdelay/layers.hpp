#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mfdelay/autodiff.hpp"

namespace mfd {

enum class Activation { relu, sigmoid, tanh, identity };

std::string to_string(Activation a);
Activation parse_activation(std::string_view name);

struct NamedParam {
  std::string name;
  ad::Var var;
};

/// Ordered collection of trainable tensors with stable names.
class ParameterList {
 public:
  void add(std::string name, ad::Var var);
  void append(const ParameterList& other);

  std::size_t size() const noexcept { return params_.size(); }
  bool empty() const noexcept { return params_.empty(); }
  NamedParam& operator[](std::size_t i) { return params_[i]; }
  const NamedParam& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  const NamedParam* find(std::string_view name) const;
  std::size_t scalar_count() const;
  void zero_grad();
  /// Euclidean norm over all gradients; missing gradients count as zero.
  double grad_norm() const;

 private:
  std::vector<NamedParam> params_;
};

struct DenseLayer {
  ad::Var weight;  // [out x in]
  ad::Var bias;    // [out]
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

/// activation(x W^T + b). Rank-1 inputs are treated as a single sample and
/// give a rank-1 result.
ad::Var dense_forward(const DenseLayer& layer, const ad::Var& x);

/// Feedforward stack: ReLU hidden layers and an identity output layer.
struct Mlp {
  std::vector<DenseLayer> layers;

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
};

ad::Var mlp_forward(const Mlp& mlp, const ad::Var& x);

enum Gate : std::size_t { kForget = 0, kInput = 1, kOutput = 2, kCandidate = 3 };

/// LSTM cell with separate input (A), recurrent (U) and bias (b) parameters
/// for the forget, input, output and candidate gates.
struct LstmCell {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::array<ad::Var, 4> input_weight;      // [h x d]
  std::array<ad::Var, 4> recurrent_weight;  // [h x h]
  std::array<ad::Var, 4> bias;              // [h]
};

struct LstmState {
  ad::Var hidden;  // a_t
  ad::Var cell;    // c_t
};

/// One cell update. Undefined `prev` members stand for the zero state.
/// Inputs may be a batch [M x d] or a single rank-1 sample [d].
LstmState lstm_step(const LstmCell& cell, const ad::Var& x, const LstmState& prev);

/// Runs the cell over a sequence starting from the zero state.
std::vector<LstmState> lstm_unroll(const LstmCell& cell, std::span<const ad::Var> inputs);

// Initialization: Glorot-uniform weights, zero biases, reproducible from
// (seed, parameter name).

double glorot_bound(std::size_t fan_in, std::size_t fan_out);

DenseLayer make_dense(std::size_t in, std::size_t out, Activation act, std::uint64_t seed,
                      std::string_view name);
Mlp make_mlp(std::size_t in, std::span<const std::size_t> hidden, std::size_t out,
             std::uint64_t seed, std::string_view name);
LstmCell make_lstm(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed,
                   std::string_view name);

/// Zero every parameter (weights and biases).
void zero_fill(ParameterList& params);

void collect(const DenseLayer& layer, std::string_view name, ParameterList& out);
void collect(const Mlp& mlp, std::string_view name, ParameterList& out);
void collect(const LstmCell& cell, std::string_view name, ParameterList& out);

}  // namespace mfd
