#include <cmath>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "cssl/data_synth.hpp"

namespace cssl {
namespace {

TEST(SigmoidTask, DefaultSplitSizes) {
  const auto task = gen_sigmoid_task(25, 500, 10.0, 0.5, 1);
  EXPECT_EQ(task.labeled.size(), 25u);
  EXPECT_EQ(task.unlabeled.size(), 500u);
  EXPECT_EQ(task.n_classes(), 2u);
  for (const auto& e : task.labeled) {
    EXPECT_GE(e.x[0], 0.0);
    EXPECT_LT(e.x[0], 1.0);
    EXPECT_LT(e.y, 2u);
  }
}

TEST(SigmoidTask, TruthIsTheSigmoid) {
  const auto t = TruthFn::sigmoid(10.0, 0.5);
  EXPECT_EQ(t(std::vector<double>{0.5})[1], 0.5);
  for (double x = 0.0; x <= 1.0; x += 0.01) {
    const double expected = 1.0 / (1.0 + std::exp(-10.0 * (x - 0.5)));
    EXPECT_NEAR(t(std::vector<double>{x})[1], expected, 1e-15);
    EXPECT_EQ(t(std::vector<double>{x})[1], t.positive(x));
  }
}

TEST(SigmoidTask, SampledLabelRateWithinBinomialBounds) {
  const auto t = TruthFn::sigmoid(10.0, 0.5);
  Rng rng(3);
  for (double x : {0.2, 0.5, 0.63}) {
    const int n = 100000;
    int pos = 0;
    for (int i = 0; i < n; ++i) pos += t.sample_label(std::vector<double>{x}, rng) == 1;
    const double p = t.positive(x);
    const double sigma = std::sqrt(p * (1.0 - p) / n);
    EXPECT_LE(std::abs(static_cast<double>(pos) / n - p), 3.0 * sigma) << "x=" << x;
  }
}

TEST(BlobsTask, ZeroSeparationIsUninformative) {
  const auto task = gen_blobs_task(3, 2, 0.0, 6, 10, 1);
  for (const auto& u : task.unlabeled) {
    for (double v : task.truth(u.x)) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  }
}

TEST(BlobsTask, LargeSeparationAtMeanIsCertain) {
  const auto t = TruthFn::blobs(4, 3, 20.0);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_GT(t(t.means()[c])[c], 1.0 - 1e-12);
}

TEST(BlobsTask, LabeledSplitIsStratified) {
  const auto task = gen_blobs_task(3, 2, 2.0, 12, 50, 9);
  std::vector<int> counts(3, 0);
  for (const auto& e : task.labeled) ++counts[e.y];
  EXPECT_EQ(counts, (std::vector<int>{4, 4, 4}));
  EXPECT_EQ(task.class_prior(), ProbDist::uniform(3));
}

TEST(BlobsTask, BayesErrorMatchesClosedForm) {
  // Two classes at (+s, 0) and (-s, 0): the Bayes risk is Phi(-s).
  const double s = 1.0;
  const auto task = gen_blobs_task(2, 2, s, 0, 0, 17, 1000000);
  std::size_t wrong = 0;
  for (const auto& e : task.test) wrong += task.truth(e.x).argmax() != e.y;
  const double mc = static_cast<double>(wrong) / static_cast<double>(task.test.size());
  const double bayes = 0.5 * std::erfc(s / std::sqrt(2.0));
  EXPECT_NEAR(mc, bayes, 0.01);
}

TEST(Generators, PureFunctionsOfSeed) {
  const auto a = gen_blobs_task(3, 2, 2.0, 12, 100, 5, 20);
  const auto b = gen_blobs_task(3, 2, 2.0, 12, 100, 5, 20);
  const auto c = gen_blobs_task(3, 2, 2.0, 12, 100, 6, 20);
  for (std::size_t i = 0; i < a.unlabeled.size(); ++i) EXPECT_EQ(a.unlabeled[i].x, b.unlabeled[i].x);
  for (std::size_t i = 0; i < a.labeled.size(); ++i) EXPECT_EQ(a.labeled[i].x, b.labeled[i].x);
  EXPECT_NE(a.unlabeled[0].x, c.unlabeled[0].x);
  const auto s1 = gen_sigmoid_task(25, 500, 10.0, 0.5, 3);
  const auto s2 = gen_sigmoid_task(25, 500, 10.0, 0.5, 3);
  for (std::size_t i = 0; i < s1.labeled.size(); ++i) {
    EXPECT_EQ(s1.labeled[i].x, s2.labeled[i].x);
    EXPECT_EQ(s1.labeled[i].y, s2.labeled[i].y);
  }
}

TEST(Generators, SplitsAreDisjoint) {
  const auto task = gen_sigmoid_task(25, 500, 10.0, 0.5, 4, 100);
  std::set<double> unl;
  for (const auto& u : task.unlabeled) unl.insert(u.x[0]);
  for (const auto& e : task.labeled) EXPECT_EQ(unl.count(e.x[0]), 0u);
  for (const auto& e : task.test) EXPECT_EQ(unl.count(e.x[0]), 0u);
}

TEST(WeakAugment, IdentityAtZeroNoise) {
  Rng rng(1);
  const std::vector<double> x{0.5, -1.5, 3.0};
  EXPECT_EQ(weak_augment(x, 0.0, rng), x);
}

TEST(WeakAugment, MeanWithinCltBound) {
  Rng rng(2);
  const std::vector<double> x{0.5, -1.5};
  const int n = 100000;
  const double sigma = 0.3;
  std::vector<double> mean(2, 0.0);
  for (int i = 0; i < n; ++i) {
    const auto y = weak_augment(x, sigma, rng);
    mean[0] += y[0] / n;
    mean[1] += y[1] / n;
  }
  for (int d = 0; d < 2; ++d) EXPECT_LE(std::abs(mean[d] - x[d]), 3.0 * sigma / std::sqrt(n));
}

TEST(WeakAugment, SeededReproducible) {
  Rng a(5);
  Rng b(5);
  const std::vector<double> x{1.0, 2.0};
  EXPECT_EQ(weak_augment(x, 0.2, a), weak_augment(x, 0.2, b));
}

TEST(StrongAugment, IdentityWithoutNoiseOrMasking) {
  Rng rng(1);
  const std::vector<double> x{0.5, -1.5, 3.0};
  EXPECT_EQ(strong_augment(x, 0.0, 0.0, rng), x);
}

TEST(StrongAugment, MaskingRateWithinBinomialBound) {
  Rng rng(3);
  const double q = 0.3;
  const int n = 100000;
  int masked = 0;
  for (int i = 0; i < n; ++i) masked += strong_augment(std::vector<double>{1.0}, 0.0, q, rng)[0] == 0.0;
  EXPECT_LE(std::abs(static_cast<double>(masked) / n - q), 3.0 * std::sqrt(q * (1 - q) / n));
}

TEST(StrongAugment, NearCertainMaskingZeroesAlmostEverything) {
  Rng rng(4);
  const std::vector<double> x(1000, 1.0);
  const auto y = strong_augment(x, 0.1, 1.0 - 1e-9, rng);
  int zeros = 0;
  for (double v : y) zeros += v == 0.0;
  EXPECT_GE(zeros, 999);
  EXPECT_THROW(strong_augment(x, 0.1, 1.0, rng), std::invalid_argument);
}

TEST(DatasetCsv, RoundTripIsExact) {
  const auto task = gen_blobs_task(3, 4, 1.5, 9, 30, 8);
  std::stringstream labeled;
  write_dataset_csv(labeled, std::span<const LabeledExample>(task.labeled));
  const auto l = read_dataset_csv(labeled);
  ASSERT_TRUE(l.labels.has_value());
  ASSERT_EQ(l.x.size(), task.labeled.size());
  for (std::size_t i = 0; i < l.x.size(); ++i) {
    EXPECT_EQ(l.x[i], task.labeled[i].x);
    EXPECT_EQ((*l.labels)[i], task.labeled[i].y);
  }

  std::stringstream unlabeled;
  write_dataset_csv(unlabeled, std::span<const UnlabeledExample>(task.unlabeled));
  const auto u = read_dataset_csv(unlabeled);
  EXPECT_FALSE(u.labels.has_value());
  for (std::size_t i = 0; i < u.x.size(); ++i) EXPECT_EQ(u.x[i], task.unlabeled[i].x);
}

TEST(DatasetCsv, MalformedInputReportsLine) {
  std::stringstream bad("x0,x1,label\n1.0,2.0,1\n1.0,oops,0\n");
  try {
    read_dataset_csv(bad);
    FAIL() << "expected an exception";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

}  // namespace
}  // namespace cssl
