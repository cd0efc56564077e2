#include <gtest/gtest.h>

#include <cmath>

#include "mfdelay/direct_control.hpp"
#include "mfdelay/errors.hpp"
#include "mfdelay/objective.hpp"
#include "support/gradcheck.hpp"

namespace ad = mfd::ad;
using mfd::DirectKind;
using mfd::Tensor;

namespace {

mfd::BrownianBatch zero_noise(std::size_t paths, const mfd::TimeGrid& g) {
  mfd::BrownianBatch b;
  b.increments = Tensor(mfd::Shape{paths, g.steps});
  return b;
}

void set(ad::Var& v, std::initializer_list<double> values) {
  auto& buf = v.mutable_value().storage();
  ASSERT_EQ(buf.size(), values.size());
  std::copy(values.begin(), values.end(), buf.begin());
}

mfd::TrainConfig small_config(const mfd::TimeGrid& g) {
  mfd::TrainConfig c;
  c.grid = g;
  c.batch_size = 32;
  c.epochs = 5;
  c.optimizer = {mfd::OptimizerKind::adam, 1e-2};
  c.sizes.lstm_hidden = 4;
  c.sizes.ffn_hidden = {5, 5};
  c.grad_tol = 0.0;
  return c;
}

}  // namespace

TEST(Policy, InputWidths) {
  const auto g = mfd::make_grid(10.0, 4.0, 0.1);
  mfd::NetworkSizes sizes;
  auto lstm = mfd::make_direct_policy(DirectKind::lstm_on_noise, sizes, {}, g, 1);
  EXPECT_EQ(lstm.cell.input_dim, 2u);
  EXPECT_EQ(lstm.cell.hidden_dim, 128u);
  EXPECT_EQ(lstm.head.out_dim(), 1u);
  auto ffn = mfd::make_direct_policy(DirectKind::ffn_on_state_history, sizes, {}, g, 1);
  EXPECT_EQ(ffn.net.in_dim(), 41u);
  EXPECT_EQ(ffn.net.layers.size(), 4u);
  auto ffn_t = mfd::make_direct_policy(DirectKind::ffn_on_state_history, sizes,
                                       {.scale_time = true, .append_time = true}, g, 1);
  EXPECT_EQ(ffn_t.net.in_dim(), 42u);
}

TEST(Policy, NoiseFeatures) {
  const auto g = mfd::make_grid(2.0, 0.0, 0.5);
  const auto b = mfd::sample_increments(3, g, 4);
  const auto f0 = mfd::noise_features(b, g, 0, true);
  const auto f3 = mfd::noise_features(b, g, 3, true);
  const auto raw = mfd::noise_features(b, g, 3, false);
  EXPECT_EQ(f0.at(1, 0), 0.0);
  EXPECT_EQ(f0.at(1, 1), 0.0);
  EXPECT_DOUBLE_EQ(f3.at(2, 0), 0.75);
  EXPECT_EQ(f3.at(2, 1), b.increments.at(2, 2));
  EXPECT_DOUBLE_EQ(raw.at(0, 0), 1.5);
}

TEST(Rollout, ZeroPolicyIsPureDiffusion) {
  const auto g = mfd::make_grid(1.0, 0.3, 0.1);
  const mfd::ModelParams p{0.5, 0.8, 1.0, 1.0};
  const auto noise = mfd::sample_increments(6, g, 2);
  const auto free = mfd::simulate_uncontrolled(noise, p, g);
  for (auto kind : {DirectKind::lstm_on_noise, DirectKind::ffn_on_state_history}) {
    auto pol = mfd::make_direct_policy(kind, {3, {4}}, {}, g, 1);
    auto params = pol.parameters();
    mfd::zero_fill(params);
    const auto s = mfd::policy_rollout(pol, noise, p, g).snapshot(g.delay_steps);
    for (std::size_t j = 0; j < 6; ++j) {
      for (std::size_t i = 0; i <= g.steps; ++i) {
        EXPECT_EQ(s.alpha_at(j, static_cast<long>(i)), 0.0);
        EXPECT_NEAR(s.x.at(j, i), free.x.at(j, i), 1e-14);
      }
    }
  }
}

TEST(Rollout, LinearFeedbackFollowsEulerRecursion) {
  const auto g = mfd::make_grid(10.0, 0.0, 0.1);
  const mfd::ModelParams p{1.0, 1.0, 1.0, 1.0};
  // relu(x) - relu(-x) = x, negated: alpha = -X
  auto pol = mfd::make_direct_policy(DirectKind::ffn_on_state_history, {1, {2}}, {}, g, 1);
  set(pol.net.layers[0].weight, {1.0, -1.0});
  set(pol.net.layers[0].bias, {0.0, 0.0});
  set(pol.net.layers[1].weight, {-1.0, 1.0});
  set(pol.net.layers[1].bias, {0.0});
  const auto s = mfd::policy_rollout(pol, zero_noise(2, g), p, g).snapshot(0);
  double x = 1.0;
  for (std::size_t i = 0; i <= g.steps; ++i) {
    EXPECT_NEAR(s.x.at(0, i), x, 1e-14);
    EXPECT_NEAR(s.alpha_at(1, static_cast<long>(i)), -x, 1e-14);
    x *= 1.0 - g.dt;
  }
}

TEST(Rollout, ImpulseReturnsAfterExactlyDSteps) {
  const auto g = mfd::make_grid(2.0, 0.5, 0.1);  // N = 20, D = 5
  const std::size_t k = 7, d = g.delay_steps;
  const mfd::InputOptions in{.scale_time = true, .append_time = true};
  auto pol = mfd::make_direct_policy(DirectKind::ffn_on_state_history, {1, {3}}, in, g, 1);
  // hat function of the time input: 1 at step k, 0 at every other grid point
  const double s = static_cast<double>(g.steps);
  const double tk = static_cast<double>(k) / s;
  std::vector<double> w(3 * (d + 2), 0.0);
  for (std::size_t u = 0; u < 3; ++u) w[u * (d + 2) + d + 1] = s;
  std::copy(w.begin(), w.end(), pol.net.layers[0].weight.mutable_value().storage().begin());
  set(pol.net.layers[0].bias, {-s * (tk - 1.0 / s), -s * tk, -s * (tk + 1.0 / s)});
  set(pol.net.layers[1].weight, {1.0, -2.0, 1.0});
  set(pol.net.layers[1].bias, {0.0});
  const mfd::ModelParams p{0.0, 1.0, 1.0, 1.0};
  const auto st = mfd::policy_rollout(pol, zero_noise(2, g), p, g).snapshot(d);
  for (std::size_t i = 0; i < g.steps; ++i) {
    const double jump = st.x.at(0, i + 1) - st.x.at(0, i);
    const double want = i == k ? g.dt : (i == k + d ? -g.dt : 0.0);
    EXPECT_NEAR(jump, want, 1e-12) << "step " << i;
    EXPECT_NEAR(st.alpha_at(0, static_cast<long>(i)), i == k ? 1.0 : 0.0, 1e-12);
  }
}

TEST(Rollout, WrongFeedforwardWidthThrows) {
  const auto g4 = mfd::make_grid(1.0, 0.4, 0.1);
  const auto g2 = mfd::make_grid(1.0, 0.2, 0.1);
  auto pol = mfd::make_direct_policy(DirectKind::ffn_on_state_history, {2, {3}}, {}, g4, 1);
  EXPECT_THROW(mfd::policy_rollout(pol, mfd::sample_increments(2, g2, 1), {}, g2),
               mfd::ShapeError);
}

TEST(Rollout, TwentyStepGradientsBothKinds) {
  const auto g = mfd::make_grid(2.0, 0.5, 0.1);
  const mfd::ModelParams p{0.2, 1.0, 1.5, 0.8};
  const auto noise = mfd::sample_increments(4, g, 8);
  for (auto kind : {DirectKind::lstm_on_noise, DirectKind::ffn_on_state_history}) {
    auto pol = mfd::make_direct_policy(kind, {3, {4}}, {}, g, 5);
    auto params = pol.parameters();
    const auto r = mfd::testing::gradcheck(params, [&] {
      return mfd::discretized_objective(mfd::policy_rollout(pol, noise, p, g), p, g);
    });
    EXPECT_LT(r.max_rel_err, 1e-4) << mfd::to_string(kind);
  }
}

TEST(Training, ZeroEpochsKeepsInitialPolicy) {
  auto cfg = small_config(mfd::make_grid(1.0, 0.2, 0.1));
  cfg.epochs = 0;
  const auto r = mfd::train_direct(cfg, DirectKind::lstm_on_noise);
  EXPECT_TRUE(r.history.records.empty());
  const auto fresh = mfd::make_direct_policy(DirectKind::lstm_on_noise, cfg.sizes, cfg.inputs,
                                             cfg.grid, cfg.seed);
  EXPECT_EQ(r.policy.head.weight.value(), fresh.head.weight.value());
}

TEST(Training, DeterministicHistory) {
  const auto cfg = small_config(mfd::make_grid(1.0, 0.2, 0.1));
  for (auto kind : {DirectKind::lstm_on_noise, DirectKind::ffn_on_state_history}) {
    const auto a = mfd::train_direct(cfg, kind);
    const auto b = mfd::train_direct(cfg, kind);
    ASSERT_EQ(a.history.records.size(), 5u);
    for (std::size_t e = 0; e < 5; ++e) {
      EXPECT_EQ(a.history.records[e].objective, b.history.records[e].objective);
      EXPECT_EQ(a.history.records[e].grad_norm, b.history.records[e].grad_norm);
    }
  }
}

TEST(Training, ObjectiveDecreasesOnFixedBatch) {
  auto cfg = small_config(mfd::make_grid(5.0, 0.5, 0.1));
  cfg.fixed_batch = true;
  cfg.epochs = 100;
  for (auto kind : {DirectKind::lstm_on_noise, DirectKind::ffn_on_state_history}) {
    const auto r = mfd::train_direct(cfg, kind);
    const auto& rec = r.history.records;
    EXPECT_LT(rec.back().objective, 0.9 * rec.front().objective);
    for (const auto& e : rec) EXPECT_GE(e.objective, 0.0);
  }
}

TEST(Training, FixedBatchReusesNoise) {
  auto cfg = small_config(mfd::make_grid(1.0, 0.2, 0.1));
  EXPECT_NE(mfd::training_noise(cfg, 0).increments, mfd::training_noise(cfg, 1).increments);
  cfg.fixed_batch = true;
  EXPECT_EQ(mfd::training_noise(cfg, 0).increments, mfd::training_noise(cfg, 7).increments);
}

TEST(Training, GradientToleranceStopsEarly) {
  auto cfg = small_config(mfd::make_grid(1.0, 0.2, 0.1));
  cfg.grad_tol = 1e9;
  const auto r = mfd::train_direct(cfg, DirectKind::lstm_on_noise);
  EXPECT_EQ(r.history.records.size(), 1u);
  EXPECT_EQ(r.history.stop_reason, "gradient");
}

TEST(Training, DivergenceGuardFires) {
  auto cfg = small_config(mfd::make_grid(2.0, 0.5, 0.1));
  cfg.optimizer = {mfd::OptimizerKind::sgd, 50.0};
  cfg.epochs = 20;
  try {
    mfd::train_direct(cfg, DirectKind::ffn_on_state_history);
    FAIL() << "expected divergence";
  } catch (const mfd::DivergenceError& e) {
    EXPECT_GT(e.epoch(), 0);
  }
}

TEST(Training, SingletonBatchRejected) {
  auto cfg = small_config(mfd::make_grid(1.0, 0.2, 0.1));
  cfg.batch_size = 1;
  EXPECT_THROW(mfd::train_direct(cfg, DirectKind::lstm_on_noise), mfd::ConfigError);
}
