#pragma once

// Value types for distributions over K classes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cssl/error.hpp"

namespace cssl {

inline constexpr double kLogEps = 1e-12;
inline constexpr double kSumTolerance = 1e-9;

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax of empty sequence");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline double safe_log(double x) { return std::log(std::max(x, kLogEps)); }

/// A probability distribution over K >= 2 classes. Validated on construction
/// and immutable afterwards.
class ProbDist {
 public:
  explicit ProbDist(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.size() < 2) {
      throw InvalidDistribution("distribution needs at least 2 classes");
    }
    double sum = 0.0;
    for (double p : probs_) {
      if (!std::isfinite(p) || p < 0.0) {
        throw InvalidDistribution("negative or non-finite probability " + std::to_string(p));
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
      throw InvalidDistribution("probabilities sum to " + std::to_string(sum));
    }
  }
  ProbDist(std::initializer_list<double> probs) : ProbDist(std::vector<double>(probs)) {}

  static ProbDist uniform(std::size_t k) { return ProbDist(std::vector<double>(k, 1.0 / static_cast<double>(k))); }

  static ProbDist one_hot(std::size_t k, std::size_t y) {
    if (y >= k) throw DimensionMismatch("one_hot: class index out of range");
    std::vector<double> v(k, 0.0);
    v[y] = 1.0;
    return ProbDist(std::move(v));
  }

  /// Divides nonnegative scores by their sum.
  static ProbDist normalized(std::span<const double> scores) {
    double sum = 0.0;
    for (double s : scores) {
      if (!std::isfinite(s) || s < 0.0) throw InvalidDistribution("cannot normalize negative or non-finite score");
      sum += s;
    }
    if (!(sum > 0.0)) throw InvalidDistribution("cannot normalize all-zero scores");
    std::vector<double> v(scores.begin(), scores.end());
    for (double& x : v) x /= sum;
    return ProbDist(std::move(v));
  }

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> values() const noexcept { return probs_; }
  const std::vector<double>& vec() const noexcept { return probs_; }
  auto begin() const noexcept { return probs_.begin(); }
  auto end() const noexcept { return probs_.end(); }

  std::size_t argmax() const { return cssl::argmax(probs_); }
  double max() const { return *std::max_element(probs_.begin(), probs_.end()); }

  friend bool operator==(const ProbDist&, const ProbDist&) = default;

 private:
  std::vector<double> probs_;
};

/// Normalized possibility distribution: entries in [0,1], maximum exactly 1.
class PossibilityDist {
 public:
  explicit PossibilityDist(std::vector<double> plaus) : plaus_(std::move(plaus)) {
    if (plaus_.empty()) throw InvalidDistribution("empty possibility distribution");
    for (double v : plaus_) {
      if (!(v >= 0.0 && v <= 1.0)) throw InvalidDistribution("plausibility outside [0,1]");
    }
    if (*std::max_element(plaus_.begin(), plaus_.end()) != 1.0) {
      throw InvalidDistribution("possibility distribution is not normalized (max != 1)");
    }
  }
  PossibilityDist(std::initializer_list<double> plaus) : PossibilityDist(std::vector<double>(plaus)) {}

  /// pi(y) = 1 and pi(y') = alpha elsewhere; induces the same set as CredalTarget{y, alpha}.
  static PossibilityDist from_credal(std::size_t k, std::size_t y, double alpha) {
    std::vector<double> v(k, alpha);
    v.at(y) = 1.0;
    return PossibilityDist(std::move(v));
  }

  std::size_t size() const noexcept { return plaus_.size(); }
  double operator[](std::size_t i) const { return plaus_[i]; }
  std::span<const double> values() const noexcept { return plaus_; }

 private:
  std::vector<double> plaus_;
};

/// The credal set {p : p(ref_class) >= 1 - alpha}.
class CredalTarget {
 public:
  CredalTarget(std::size_t ref_class, double alpha) : ref_class_(ref_class), alpha_(alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
      throw std::invalid_argument("precisiation degree must lie in [0,1], got " + std::to_string(alpha));
    }
  }

  std::size_t ref_class() const noexcept { return ref_class_; }
  double alpha() const noexcept { return alpha_; }

  friend bool operator==(const CredalTarget&, const CredalTarget&) = default;

 private:
  std::size_t ref_class_;
  double alpha_;
};

}  // namespace cssl
