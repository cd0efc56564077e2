#include <gtest/gtest.h>

#include <cmath>

#include "mfdelay/counter_rng.hpp"

TEST(Philox, KnownAnswerZero) {
  const auto out = mfd::philox4x32_10({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out, (mfd::PhiloxCounter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
}

TEST(Philox, KnownAnswerOnes) {
  const auto out =
      mfd::philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                         {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out, (mfd::PhiloxCounter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
}

TEST(Philox, KnownAnswerPi) {
  const auto out = mfd::philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                      {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(out, (mfd::PhiloxCounter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(CounterRng, PureFunctionOfCoordinates) {
  const mfd::CounterRng a(5, 1), b(5, 1), c(5, 2), d(6, 1);
  EXPECT_EQ(a.normal(3, 7), b.normal(3, 7));
  EXPECT_NE(a.normal(3, 7), c.normal(3, 7));
  EXPECT_NE(a.normal(3, 7), d.normal(3, 7));
  EXPECT_NE(a.normal(3, 7), a.normal(7, 3));
}

TEST(CounterRng, UniformOpenInterval) {
  const mfd::CounterRng r(1);
  double sum = 0.0;
  const int n = 100000;
  for (int k = 0; k < n; ++k) {
    const double u = r.uniform(k, 0);
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  // mean of U(0,1) has sd 1/sqrt(12 n)
  EXPECT_NEAR(sum / n, 0.5, 4.0 / std::sqrt(12.0 * n));
}

TEST(StreamId, DistinctNames) {
  EXPECT_NE(mfd::stream_id("policy.head.weight"), mfd::stream_id("policy.head.bias"));
  EXPECT_EQ(mfd::stream_id(""), 0xcbf29ce484222325ull);
}
