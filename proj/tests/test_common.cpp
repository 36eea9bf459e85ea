#include <bts/common.hpp>

#include <gtest/gtest.h>

using namespace bts;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, UniformStaysInRange) {
  Rng r(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double v = r.uniform(-2.0, 5.0);
    ASSERT_GE(v, -2.0);
    ASSERT_LT(v, 5.0);
    ASSERT_LT(r.index(7), 7u);
  }
}

TEST(Rng, NormalMoments) {
  Rng r(11);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, ForkDoesNotAdvanceParent) {
  Rng a(5), b(5);
  Rng child = a.fork(9);
  (void)child.next_u64();
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, ForksWithDifferentTagsDiffer) {
  Rng a(5);
  Rng c1 = a.fork(1), c2 = a.fork(2), c1b = a.fork(1);
  const auto x = c1.next_u64();
  EXPECT_NE(x, c2.next_u64());
  EXPECT_EQ(x, c1b.next_u64());
}

TEST(Cases, RangeIsChecked) {
  for (int c = 1; c <= kNumCases; ++c) EXPECT_NO_THROW(check_case(c));
  EXPECT_THROW(check_case(0), Error);
  EXPECT_THROW(check_case(5), Error);
  try {
    check_case(9);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::usage);
  }
}

TEST(Array3, RowMajorLayout) {
  Array3<int> a(2, 3, 4);
  int n = 0;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) a(i, j, k) = n++;
  for (int i = 0; i < 24; ++i) EXPECT_EQ(a.data[static_cast<std::size_t>(i)], i);
  const auto slab = a.slab(1, 1);
  EXPECT_EQ(slab.size(), 12u);
  EXPECT_EQ(slab[0], 12);
}
