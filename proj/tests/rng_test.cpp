#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "cssl/rng.hpp"

namespace cssl {
namespace {

TEST(Rng, MatchesReferenceSplitMix64) {
  // Published SplitMix64 outputs for seed 0.
  Rng rng(0);
  EXPECT_EQ(rng.next_u64(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(rng.next_u64(), 0x6E789E6AA1B965F4ULL);
  EXPECT_EQ(rng.next_u64(), 0x06C45D188009454FULL);
}

TEST(Rng, SameKeySameStream) {
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, SubstreamsAreDistinctAndDoNotAdvanceParent) {
  Rng root(7);
  Rng a = root.substream("data");
  Rng b = root.substream("dropout");
  Rng c = root.substream(std::uint64_t{3});
  EXPECT_NE(a.next_u64(), b.next_u64());
  EXPECT_NE(a.key(), c.key());
  EXPECT_EQ(root.counter(), 0u);
  EXPECT_EQ(root.substream("data").key(), Rng(7).substream("data").key());
}

TEST(Rng, UniformIndexStaysInRangeAndCoversIt) {
  Rng rng(3);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 10000; ++i) {
    const auto v = rng.uniform_index(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
  EXPECT_EQ(rng.uniform_index(1), 0u);
}

TEST(Rng, NormalMomentsWithinCltBounds) {
  Rng rng(4);
  const int n = 200000;
  double s = 0.0;
  double s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  EXPECT_LT(std::abs(mean), 4.0 / std::sqrt(n));
  EXPECT_LT(std::abs(var - 1.0), 4.0 * std::sqrt(2.0 / n));
}

TEST(Rng, ShuffleIsAPermutation) {
  Rng rng(5);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  rng.shuffle(v);
  std::multiset<int> s(v.begin(), v.end());
  EXPECT_EQ(s, (std::multiset<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
}

}  // namespace
}  // namespace cssl
