#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "cssl/credal.hpp"
#include "test_support.hpp"

namespace cssl {
namespace {

using testing::central_differences;
using testing::random_dist;
using testing::random_simplex;
using testing::relative_error;

TEST(CredalContains, DegenerateSetHoldsOnlyTheOneHot) {
  EXPECT_TRUE(credal_contains(CredalTarget(0, 0.0), ProbDist({1.0, 0.0, 0.0})));
  EXPECT_FALSE(credal_contains(CredalTarget(0, 0.0), ProbDist({0.99, 0.01, 0.0})));
}

TEST(CredalContains, FullSimplexHoldsEverything) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    EXPECT_TRUE(credal_contains(CredalTarget(0, 1.0), random_dist(rng, 4)));
  }
}

TEST(CredalContains, Examples) {
  EXPECT_FALSE(credal_contains(CredalTarget(0, 0.1), ProbDist({0.5, 0.3, 0.2})));
  // Boundary counts as inside.
  EXPECT_TRUE(credal_contains(CredalTarget(0, 0.5), ProbDist({0.5, 0.3, 0.2})));
  EXPECT_THROW(credal_contains(CredalTarget(3, 0.5), ProbDist({0.5, 0.3, 0.2})), DimensionMismatch);
}

TEST(CredalTarget, RejectsAlphaOutsideUnitInterval) {
  EXPECT_THROW(CredalTarget(0, -0.1), std::invalid_argument);
  EXPECT_THROW(CredalTarget(0, 1.1), std::invalid_argument);
}

TEST(PossibilityContains, Examples) {
  EXPECT_TRUE(possibility_contains(PossibilityDist({1.0, 1.0, 1.0}), ProbDist({0.2, 0.3, 0.5})));
  EXPECT_FALSE(possibility_contains(PossibilityDist({1.0, 0.0, 0.0}), ProbDist({0.9, 0.1, 0.0})));
  EXPECT_TRUE(possibility_contains(PossibilityDist::from_credal(3, 0, 0.3), ProbDist({0.7, 0.2, 0.1})));
  EXPECT_FALSE(possibility_contains(PossibilityDist::from_credal(3, 0, 0.3), ProbDist({0.6, 0.2, 0.2})));
}

TEST(PossibilityContains, Errors) {
  EXPECT_THROW(possibility_contains(PossibilityDist({1.0, 1.0}), ProbDist({0.2, 0.3, 0.5})), DimensionMismatch);
  std::vector<double> big(17, 1.0 / 17.0);
  EXPECT_THROW(possibility_contains(PossibilityDist(std::vector<double>(17, 1.0)), ProbDist(big)),
               std::invalid_argument);
  EXPECT_THROW(PossibilityDist({0.9, 0.5}), InvalidDistribution);
}

TEST(ProjectToBoundary, Examples) {
  const auto r = project_to_boundary(CredalTarget(0, 0.1), ProbDist({0.5, 0.3, 0.2}));
  EXPECT_NEAR(r[0], 0.9, 1e-15);
  EXPECT_NEAR(r[1], 0.1 * 0.3 / 0.5, 1e-15);
  EXPECT_NEAR(r[2], 0.1 * 0.2 / 0.5, 1e-15);

  const auto d = project_to_boundary(CredalTarget(0, 0.0), ProbDist({0.5, 0.25, 0.25}));
  EXPECT_EQ(d.vec(), (std::vector<double>{1.0, 0.0, 0.0}));

  const auto m = project_to_boundary(CredalTarget(1, 0.2), ProbDist({0.5, 0.1, 0.4}));
  EXPECT_NEAR(m[0], 0.2 * 0.5 / 0.9, 1e-15);
  EXPECT_NEAR(m[1], 0.8, 1e-15);
  EXPECT_NEAR(m[2], 0.2 * 0.4 / 0.9, 1e-15);
}

TEST(ProjectToBoundary, DegenerateDenominatorThrows) {
  EXPECT_THROW(project_to_boundary(CredalTarget(0, 0.1), ProbDist({1.0, 0.0, 0.0})), NumericError);
}

TEST(OslKlLoss, Examples) {
  EXPECT_EQ(osl_kl_loss(CredalTarget(0, 0.5), ProbDist({0.6, 0.3, 0.1})), 0.0);
  const double oracle = 0.9 * std::log(0.9 / 0.5) + 0.06 * std::log(0.06 / 0.3) + 0.04 * std::log(0.04 / 0.2);
  EXPECT_NEAR(oracle, 0.3681, 5e-5);
  EXPECT_NEAR(osl_kl_loss(CredalTarget(0, 0.1), ProbDist({0.5, 0.3, 0.2})), oracle, 1e-10 * oracle);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(osl_kl_loss(CredalTarget(0, 1.0), random_dist(rng, 5)), 0.0);
}

TEST(OslKlLoss, InvalidDistributionRejected) {
  EXPECT_THROW(osl_kl_loss(CredalTarget(0, 0.1), ProbDist({0.5, 0.3, 0.3})), InvalidDistribution);
}

TEST(KlDivergence, Examples) {
  EXPECT_EQ(kl_divergence(ProbDist({0.5, 0.5}), ProbDist({0.5, 0.5})), 0.0);
  EXPECT_NEAR(kl_divergence(ProbDist({1.0, 0.0}), ProbDist({0.5, 0.5})), std::log(2.0), 1e-15);
  const double oracle = 0.9 * std::log(0.9 / 0.6) + 0.1 * std::log(0.1 / 0.4);
  EXPECT_NEAR(oracle, 0.22629, 5e-6);
  EXPECT_NEAR(kl_divergence(ProbDist({0.9, 0.1}), ProbDist({0.6, 0.4})), oracle, 1e-15);
  EXPECT_THROW(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{0.2, 0.3, 0.5}), DimensionMismatch);
}

TEST(CrossEntropy, Examples) {
  EXPECT_NEAR(cross_entropy(ProbDist::one_hot(3, 1), ProbDist({0.2, 0.5, 0.3})), -std::log(0.5), 1e-15);
  EXPECT_NEAR(cross_entropy(ProbDist::uniform(4), ProbDist::uniform(4)), std::log(4.0), 1e-15);
  const double h = -(0.7 * std::log(0.7) + 0.3 * std::log(0.3));
  EXPECT_NEAR(h, 0.6109, 5e-5);
  EXPECT_NEAR(cross_entropy(ProbDist({0.7, 0.3}), ProbDist({0.7, 0.3})), h, 1e-15);
}

TEST(CrossEntropy, ZeroProbabilityIsClampedNotInfinite) {
  EXPECT_NEAR(cross_entropy(ProbDist({1.0, 0.0}), ProbDist({0.0, 1.0})), -std::log(kLogEps), 1e-9);
}

TEST(OslKlGrad, InsideIsZero) {
  const auto g = osl_kl_grad(CredalTarget(0, 0.5), ProbDist({0.6, 0.3, 0.1}));
  EXPECT_EQ(g, (std::vector<double>{0.0, 0.0, 0.0}));
}

TEST(OslKlGrad, MatchesFiniteDifferencesAtExample) {
  const CredalTarget t(0, 0.1);
  const std::vector<double> p{0.5, 0.3, 0.2};
  const auto fd = central_differences([&](const std::vector<double>& q) { return osl_kl_loss(t, q); }, p, 1e-6);
  EXPECT_LE(relative_error(osl_kl_grad(t, p), fd), 1e-4);
}

TEST(OslKlGrad, AlphaZeroIsCrossEntropyGradient) {
  const std::vector<double> p{0.4, 0.35, 0.25};
  const auto g = osl_kl_grad(CredalTarget(1, 0.0), p);
  EXPECT_DOUBLE_EQ(g[1], -1.0 / 0.35);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[2], 0.0);
}

// ---------------------------------------------------------------------------
// Properties

TEST(CredalProperties, ZeroIffMember) {
  Rng rng(10);
  int members = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t k = 2 + rng.uniform_index(9);
    const CredalTarget t(rng.uniform_index(k), rng.uniform());
    const ProbDist p = random_dist(rng, k);
    const bool inside = credal_contains(t, p);
    members += inside;
    EXPECT_EQ(osl_kl_loss(t, p) == 0.0, inside) << "draw " << i;
  }
  // Both branches must actually be exercised.
  EXPECT_GT(members, 1000);
  EXPECT_LT(members, 9000);
}

TEST(CredalProperties, ProjectionIdentities) {
  Rng rng(11);
  for (int i = 0; i < 5000; ++i) {
    const std::size_t k = 2 + rng.uniform_index(9);
    const CredalTarget t(rng.uniform_index(k), rng.uniform());
    const ProbDist p = random_dist(rng, k);
    if (credal_contains(t, p)) continue;
    const auto r = project_to_boundary(t, p.values());
    const std::size_t y = t.ref_class();
    EXPECT_EQ(r[y], 1.0 - t.alpha());
    double sum = 0.0;
    for (double v : r) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        if (a == y || b == y || p[b] <= 0.0 || r[b] <= 0.0) continue;
        EXPECT_NEAR(r[a] / r[b], p[a] / p[b], 1e-9 * std::max(1.0, p[a] / p[b]));
      }
    }
  }
}

TEST(CredalProperties, LossMonotoneInAlpha) {
  Rng rng(12);
  for (int i = 0; i < 10000; ++i) {
    const std::size_t k = 2 + rng.uniform_index(9);
    const std::size_t y = rng.uniform_index(k);
    double a1 = rng.uniform();
    double a2 = rng.uniform();
    if (a1 > a2) std::swap(a1, a2);
    const ProbDist p = random_dist(rng, k);
    EXPECT_LE(osl_kl_loss(CredalTarget(y, a2), p), osl_kl_loss(CredalTarget(y, a1), p) + 1e-9);
  }
}

TEST(CredalProperties, LossConvexOnSimplex) {
  Rng rng(13);
  for (int i = 0; i < 10000; ++i) {
    const std::size_t k = 2 + rng.uniform_index(9);
    const CredalTarget t(rng.uniform_index(k), rng.uniform());
    const auto p1 = random_simplex(rng, k);
    const auto p2 = random_simplex(rng, k);
    const double lambda = rng.uniform();
    std::vector<double> mix(k);
    for (std::size_t j = 0; j < k; ++j) mix[j] = lambda * p1[j] + (1.0 - lambda) * p2[j];
    const double lhs = osl_kl_loss(t, mix);
    const double rhs = lambda * osl_kl_loss(t, p1) + (1.0 - lambda) * osl_kl_loss(t, p2);
    EXPECT_LE(lhs, rhs + 1e-9) << "draw " << i;
  }
}

TEST(CredalProperties, PossibilityEquivalence) {
  Rng rng(14);
  for (int i = 0; i < 10000; ++i) {
    const std::size_t k = 2 + rng.uniform_index(7);
    const std::size_t y = rng.uniform_index(k);
    const double alpha = rng.uniform();
    const ProbDist p = random_dist(rng, k);
    EXPECT_EQ(possibility_contains(PossibilityDist::from_credal(k, y, alpha), p),
              credal_contains(CredalTarget(y, alpha), p));
  }
}

TEST(CredalProperties, GradientMatchesFiniteDifferences) {
  Rng rng(15);
  int checked = 0;
  while (checked < 1000) {
    const std::size_t k = 2 + rng.uniform_index(9);
    const CredalTarget t(rng.uniform_index(k), rng.uniform());
    const auto p = random_simplex(rng, k, 1e-3);
    if (std::abs(p[t.ref_class()] - (1.0 - t.alpha())) < 1e-2) continue;
    const auto f = [&](const std::vector<double>& q) { return osl_kl_loss(t, q); };
    const auto fd = central_differences(f, p, 1e-6);
    const auto g = osl_kl_grad(t, p);
    if (credal_contains(t, p)) {
      for (double v : fd) EXPECT_EQ(v, 0.0);
    } else {
      EXPECT_LE(relative_error(g, fd), 1e-4);
    }
    ++checked;
  }
}

TEST(CredalProperties, DetachedGradientEqualsFullGradient) {
  Rng rng(16);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.uniform_index(9);
    const CredalTarget t(rng.uniform_index(k), rng.uniform());
    const auto p = random_simplex(rng, k, 1e-3);
    const auto full = osl_kl_grad(t, p, ProjectionGradient::Full);
    const auto detached = osl_kl_grad(t, p, ProjectionGradient::Detached);
    for (std::size_t j = 0; j < k; ++j) EXPECT_NEAR(full[j], detached[j], 1e-9 * std::max(1.0, std::abs(full[j])));
  }
}

TEST(CredalProperties, AlphaZeroReducesToCrossEntropy) {
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.uniform_index(9);
    const std::size_t y = rng.uniform_index(k);
    const ProbDist p = random_dist(rng, k, 1e-6);
    const ProbDist onehot = ProbDist::one_hot(k, y);
    const double loss = osl_kl_loss(CredalTarget(y, 0.0), p);
    EXPECT_EQ(loss, kl_divergence(onehot, p));
    EXPECT_EQ(loss, cross_entropy(onehot, p));
  }
}

}  // namespace
}  // namespace cssl
