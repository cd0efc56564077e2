#include <gtest/gtest.h>

#include <cmath>

#include "mfdelay/autodiff.hpp"
#include "mfdelay/counter_rng.hpp"
#include "mfdelay/errors.hpp"
#include "support/gradcheck.hpp"

namespace ad = mfd::ad;
using mfd::Shape;
using mfd::Tensor;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  mfd::CounterRng rng(seed, 7);
  Tensor t(shape);
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = rng.normal(k, 0);
  return t;
}

}  // namespace

TEST(Autodiff, LinearSumGradIsInput) {
  auto w = ad::parameter(Tensor::vector(std::vector<double>{0.3, -1.0, 2.0}));
  const auto x = ad::constant(Tensor::vector(std::vector<double>{4.0, 5.0, -6.0}));
  ad::backward(ad::sum(w * x));
  ASSERT_TRUE(w.has_grad());
  EXPECT_DOUBLE_EQ(w.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], 5.0);
  EXPECT_DOUBLE_EQ(w.grad()[2], -6.0);
}

TEST(Autodiff, SigmoidOfDotProduct) {
  auto w = ad::parameter(Tensor::vector(std::vector<double>{0.5, -0.25}));
  const auto x = ad::constant(Tensor::vector(std::vector<double>{2.0, 1.0}));
  ad::backward(ad::sigmoid(ad::sum(w * x)));
  const double z = 0.5 * 2.0 - 0.25 * 1.0;
  const double s = 1.0 / (1.0 + std::exp(-z));
  EXPECT_NEAR(w.grad()[0], s * (1 - s) * 2.0, 1e-15);
  EXPECT_NEAR(w.grad()[1], s * (1 - s) * 1.0, 1e-15);
}

TEST(Autodiff, GradientsAccumulateAcrossUses) {
  auto w = ad::parameter(Tensor::scalar(3.0));
  ad::backward(w * w + w);  // d/dw = 2w + 1
  EXPECT_DOUBLE_EQ(w.grad()[0], 7.0);
  ad::backward(w * 2.0);
  EXPECT_DOUBLE_EQ(w.grad()[0], 9.0);
  w.zero_grad();
  EXPECT_FALSE(w.has_grad());
}

TEST(Autodiff, NonScalarLossThrows) {
  auto w = ad::parameter(Tensor({3}, 1.0));
  EXPECT_THROW(ad::backward(w * 2.0), mfd::UsageError);
}

TEST(Autodiff, ConstantsGetNoGraph) {
  const auto a = ad::constant(Tensor::scalar(2.0));
  const auto b = a * a;
  EXPECT_FALSE(b.requires_grad());
  EXPECT_EQ(b.node()->parents.size(), 0u);
}

TEST(Autodiff, NoGradGuardSuppressesRecording) {
  auto w = ad::parameter(Tensor::scalar(2.0));
  {
    ad::NoGradGuard guard;
    EXPECT_FALSE(ad::grad_enabled());
    EXPECT_FALSE((w * w).requires_grad());
  }
  EXPECT_TRUE(ad::grad_enabled());
  EXPECT_TRUE((w * w).requires_grad());
}

TEST(Autodiff, DetachStopsGradient) {
  auto w = ad::parameter(Tensor::scalar(3.0));
  ad::backward(w * ad::detach(w));
  EXPECT_DOUBLE_EQ(w.grad()[0], 3.0);
}

TEST(Autodiff, BroadcastShapes) {
  const auto m = ad::constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  const auto row = ad::constant(Tensor::vector(std::vector<double>{10, 20, 30}));
  const auto col = ad::constant(Tensor::matrix(2, 1, {100, 200}));
  const auto s = ad::constant(Tensor::scalar(0.5));
  EXPECT_DOUBLE_EQ((m + row).value().at(1, 2), 36.0);
  EXPECT_DOUBLE_EQ((m + col).value().at(1, 0), 204.0);
  EXPECT_DOUBLE_EQ((m * s).value().at(0, 1), 1.0);
  EXPECT_THROW(m + ad::constant(Tensor({2, 2}, 0.0)), mfd::ShapeError);
}

TEST(Autodiff, MatmulShapesChecked) {
  const auto a = ad::constant(Tensor({2, 3}, 1.0));
  const auto b = ad::constant(Tensor({3, 4}, 1.0));
  EXPECT_EQ(ad::matmul(a, b).shape(), (Shape{2, 4}));
  EXPECT_THROW(ad::matmul(b, a), mfd::ShapeError);
}

TEST(Autodiff, ReduceAndReshape) {
  const auto m = ad::constant(Tensor::matrix(2, 2, {1, 2, 3, 5}));
  EXPECT_DOUBLE_EQ(ad::sum(m).item(), 11.0);
  EXPECT_DOUBLE_EQ(ad::mean(m).item(), 2.75);
  const auto cm = ad::mean_rows(m);
  EXPECT_EQ(cm.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(cm.value()[1], 3.5);
  EXPECT_EQ(ad::reshape(m, Shape{4}).shape(), (Shape{4}));
  EXPECT_THROW(ad::reshape(m, Shape{3}), mfd::ShapeError);
  EXPECT_DOUBLE_EQ(ad::slice_cols(m, 1, 1).value().at(1, 0), 5.0);
}

TEST(Autodiff, EveryOpMatchesFiniteDifferences) {
  for (std::uint64_t draw = 0; draw < 5; ++draw) {
    mfd::ParameterList params;
    auto a = ad::parameter(random_tensor({3, 4}, 100 + draw));
    auto b = ad::parameter(random_tensor({4, 2}, 200 + draw));
    auto c = ad::parameter(random_tensor({3, 4}, 300 + draw));
    auto bias = ad::parameter(random_tensor({2}, 400 + draw));
    params.add("a", a);
    params.add("b", b);
    params.add("c", c);
    params.add("bias", bias);
    const auto loss = [&] {
      const auto h = ad::tanh(a * c - c) + ad::sigmoid(a) * 0.5 + ad::relu(c + 0.1);
      const auto p = ad::matmul(h, b) + bias;
      const std::vector<ad::Var> parts = {p, ad::square(ad::slice_cols(h, 1, 2))};
      const auto joined = ad::concat_cols(parts);
      return ad::mean(ad::square(joined)) + ad::sum(ad::mean_rows(-joined)) +
             ad::sum(ad::linear(a, ad::reshape(b, Shape{2, 4}), bias));
    };
    const auto r = mfd::testing::gradcheck(params, loss);
    EXPECT_LT(r.max_rel_err, 1e-6) << "draw " << draw;
  }
}

TEST(Autodiff, RepeatedPassesAreBitIdentical) {
  const auto run = [] {
    auto w = ad::parameter(random_tensor({4, 4}, 9));
    const auto x = ad::constant(random_tensor({5, 4}, 10));
    ad::backward(ad::mean(ad::tanh(ad::matmul(x, w))));
    return std::make_pair(w.value(), w.grad_tensor());
  };
  EXPECT_EQ(run(), run());
}
