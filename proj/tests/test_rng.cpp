#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "slt/rng.hpp"

using slt::Rng;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64();
  EXPECT_EQ(same, 0);
}

TEST(Rng, SplitIsIndependentOfParentUse) {
  Rng a(7);
  Rng child1 = a.split(3);
  a.next_u64();
  a.next_u64();
  Rng child2 = a.split(3);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(child1.next_u64(), child2.next_u64());
}

TEST(Rng, SplitStreamsDiffer) {
  Rng a(7);
  Rng c0 = a.split(0), c1 = a.split(1);
  std::set<uint64_t> seen;
  for (int i = 0; i < 64; ++i) {
    seen.insert(c0.next_u64());
    seen.insert(c1.next_u64());
  }
  EXPECT_EQ(seen.size(), 128u);
}

TEST(Rng, UniformInRange) {
  Rng a(11);
  for (int i = 0; i < 1000; ++i) {
    double u = a.uniform(-2.0, 3.0);
    EXPECT_GE(u, -2.0);
    EXPECT_LT(u, 3.0);
  }
}

TEST(Rng, NextBelowBounds) {
  Rng a(13);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) ++counts[static_cast<size_t>(a.next_below(7))];
  for (int c : counts) EXPECT_GT(c, 800);  // ~1000 each
  EXPECT_THROW(a.next_below(0), slt::Error);
}

TEST(Rng, NormalMoments) {
  Rng a(17);
  double sum = 0, sum2 = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    double z = a.normal();
    sum += z;
    sum2 += z * z;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.03);
}

TEST(Rng, NormalConsumesTwoDrawsEach) {
  Rng a(23);
  a.normal();
  EXPECT_EQ(a.counter(), 2u);
  a.normal();
  EXPECT_EQ(a.counter(), 4u);
}

TEST(Rng, StateRoundTrip) {
  Rng a(29);
  for (int i = 0; i < 5; ++i) a.next_u64();
  Rng b;
  b.set_state(a.key(), a.counter());
  for (int i = 0; i < 16; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}
