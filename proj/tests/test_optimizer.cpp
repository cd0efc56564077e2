#include <gtest/gtest.h>

#include <cmath>

#include "mfdelay/errors.hpp"
#include "mfdelay/optimizer.hpp"

namespace ad = mfd::ad;
using mfd::OptimizerKind;
using mfd::OptimizerSettings;
using mfd::Tensor;

namespace {

mfd::ParameterList single(double theta, double grad) {
  mfd::ParameterList p;
  auto w = ad::parameter(Tensor::scalar(theta));
  w.node()->grad_buffer()[0] = grad;
  p.add("w", w);
  return p;
}

}  // namespace

TEST(Optimizer, SgdOneStep) {
  auto p = single(1.0, 2.0);
  mfd::Optimizer opt({OptimizerKind::sgd, 0.1});
  opt.step(p);
  EXPECT_DOUBLE_EQ(p[0].var.item(), 0.8);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Optimizer, SgdZeroGradientLeavesParameters) {
  auto p = single(1.25, 0.0);
  mfd::Optimizer opt({OptimizerKind::sgd, 0.5});
  opt.step(p);
  EXPECT_EQ(p[0].var.item(), 1.25);
}

TEST(Optimizer, AdamFirstStepIsLearningRateForAnyScale) {
  for (double g : {1.0, 1e-3, 250.0, -7.0}) {
    auto p = single(0.0, g);
    mfd::Optimizer opt({OptimizerKind::adam, 0.01});
    opt.step(p);
    EXPECT_NEAR(std::abs(p[0].var.item()), 0.01 * std::abs(g) / (std::abs(g) + 1e-8), 1e-15);
    EXPECT_NEAR(std::abs(p[0].var.item()), 0.01, 1e-7);
    EXPECT_LT(p[0].var.item() * g, 0.0);
  }
}

TEST(Optimizer, AdamMatchesReferenceRecursion) {
  const OptimizerSettings s{OptimizerKind::adam, 0.05, 0.8, 0.95, 1e-6};
  mfd::Optimizer opt(s);
  auto p = single(1.0, 0.0);
  double theta = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    const double g = 2.0 * theta - 0.3 * t;
    p[0].var.node()->grad_buffer()[0] = g;
    opt.step(p);
    m = s.beta1 * m + (1 - s.beta1) * g;
    v = s.beta2 * v + (1 - s.beta2) * g * g;
    const double mh = m / (1 - std::pow(s.beta1, t)), vh = v / (1 - std::pow(s.beta2, t));
    theta -= s.learning_rate * mh / (std::sqrt(vh) + s.epsilon);
    EXPECT_NEAR(p[0].var.item(), theta, 1e-14);
  }
}

TEST(Optimizer, MissingGradientThrows) {
  mfd::ParameterList p;
  p.add("w", ad::parameter(Tensor::scalar(1.0)));
  mfd::Optimizer opt({OptimizerKind::sgd, 0.1});
  EXPECT_THROW(opt.step(p), mfd::UsageError);
}

TEST(Optimizer, NonPositiveLearningRateRejected) {
  EXPECT_THROW(mfd::Optimizer({OptimizerKind::sgd, 0.0}), mfd::UsageError);
  EXPECT_THROW(mfd::Optimizer({OptimizerKind::adam, -1e-3}), mfd::UsageError);
}

TEST(Optimizer, KindNames) {
  EXPECT_EQ(mfd::parse_optimizer("adam"), OptimizerKind::adam);
  EXPECT_EQ(mfd::to_string(OptimizerKind::sgd), "sgd");
  EXPECT_THROW(mfd::parse_optimizer("rmsprop"), mfd::UsageError);
}

TEST(Optimizer, DefaultsAreSgdAtOneThousandth) {
  const OptimizerSettings s;
  EXPECT_EQ(s.kind, OptimizerKind::sgd);
  EXPECT_EQ(s.learning_rate, 1e-3);
  EXPECT_EQ(s.beta1, 0.9);
  EXPECT_EQ(s.beta2, 0.999);
  EXPECT_EQ(s.epsilon, 1e-8);
}
