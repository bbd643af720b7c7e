#include "pekit/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace {

using pekit::Rng;

TEST(Rng, SameSeedSameSequence) {
  Rng a(1234), b(1234);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.raw(), b.raw());
  }
}

TEST(Rng, DifferentSeedsDiverge) {
  Rng a(1), b(2);
  int equal = 0;
  for (int i = 0; i < 64; ++i) {
    if (a.raw() == b.raw()) ++equal;
  }
  EXPECT_LT(equal, 4);
}

TEST(Rng, UniformRange) {
  Rng r(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Rng, UniformPosNeverZero) {
  Rng r(7);
  for (int i = 0; i < 10000; ++i) {
    EXPECT_GT(r.uniform_pos(), 0.0);
    EXPECT_LE(r.uniform_pos(), 1.0);
  }
}

TEST(Rng, NormalMoments) {
  Rng r(99);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sum2 += z * z;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(Rng, ExponentialMean) {
  Rng r(5);
  const int n = 200000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += r.exponential(2.0);
  EXPECT_NEAR(sum / n, 2.0, 0.03);
}

TEST(Rng, UniformIntInclusive) {
  Rng r(11);
  bool saw_lo = false, saw_hi = false;
  for (int i = 0; i < 1000; ++i) {
    const auto v = r.uniform_int(2, 5);
    EXPECT_GE(v, 2);
    EXPECT_LE(v, 5);
    saw_lo |= v == 2;
    saw_hi |= v == 5;
  }
  EXPECT_TRUE(saw_lo);
  EXPECT_TRUE(saw_hi);
}

TEST(Rng, ForkStreamsIndependentAndStable) {
  Rng base(42);
  Rng c0 = base.fork(0);
  Rng c1 = base.fork(1);
  Rng c0_again = base.fork(0);
  EXPECT_NE(c0.raw(), c1.raw());
  Rng c0_b = base.fork(0);
  EXPECT_EQ(c0_again.raw(), c0_b.raw());
}

}  // namespace
