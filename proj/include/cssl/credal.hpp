#pragma once

// Credal sets of the form Q = {p : p(y) >= 1 - alpha}, the possibility
// distributions inducing them, and the optimistic superset (infimum) loss
//
//   L*(Q, p_hat) = min_{p in Q} KL(p || p_hat)
//
// which is 0 inside Q and KL(p_r || p_hat) outside, where p_r puts 1 - alpha
// on y and spreads alpha over the other classes proportionally to p_hat.
//
// Loss functions take p_hat as a raw span so that finite-difference checks
// can perturb single coordinates off the simplex; ProbDist overloads are
// provided for the validated path.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cssl/error.hpp"
#include "cssl/prob.hpp"

namespace cssl {

/// Slack on the boundary of Q; points within it count as members.
inline constexpr double kBoundaryTolerance = 1e-12;
inline constexpr std::size_t kMaxSubsetClasses = 16;

/// How the gradient of the infimum loss treats the projected target p_r.
enum class ProjectionGradient {
  Full,      // differentiate through the projection
  Detached,  // p_r held constant
};

inline bool credal_contains(const CredalTarget& target, std::span<const double> p) {
  if (target.ref_class() >= p.size()) {
    throw DimensionMismatch("credal target class " + std::to_string(target.ref_class()) +
                            " out of range for K=" + std::to_string(p.size()));
  }
  return p[target.ref_class()] >= 1.0 - target.alpha() - kBoundaryTolerance;
}

inline bool credal_contains(const CredalTarget& target, const ProbDist& p) {
  return credal_contains(target, p.values());
}

/// Membership in the credal set induced by a possibility distribution, by
/// checking P(Y) <= Pi(Y) on every non-empty subset Y. Exponential in K.
inline bool possibility_contains(const PossibilityDist& pi, const ProbDist& p) {
  detail::require_same_size(pi.size(), p.size(), "possibility_contains");
  const std::size_t k = p.size();
  if (k > kMaxSubsetClasses) {
    throw std::invalid_argument("possibility_contains: K=" + std::to_string(k) +
                                " exceeds the subset-enumeration limit of 16");
  }
  const std::uint32_t n_subsets = std::uint32_t{1} << k;
  for (std::uint32_t mask = 1; mask < n_subsets; ++mask) {
    double mass = 0.0;
    double upper = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (mask & (std::uint32_t{1} << i)) {
        mass += p[i];
        upper = std::max(upper, pi[i]);
      }
    }
    if (mass > upper + kBoundaryTolerance) return false;
  }
  return true;
}

/// Projection of p_hat onto the boundary of Q (the KL-closest member).
/// Callers are expected to pass p_hat outside Q.
inline std::vector<double> project_to_boundary(const CredalTarget& target, std::span<const double> p_hat) {
  const std::size_t y = target.ref_class();
  if (y >= p_hat.size()) throw DimensionMismatch("project_to_boundary: class index out of range");
  double rest = 0.0;
  for (std::size_t i = 0; i < p_hat.size(); ++i) {
    if (i != y) rest += p_hat[i];
  }
  if (!(rest > 0.0)) {
    throw NumericError("project_to_boundary: prediction puts no mass outside the reference class");
  }
  const double alpha = target.alpha();
  std::vector<double> out(p_hat.size());
  for (std::size_t i = 0; i < p_hat.size(); ++i) {
    out[i] = (i == y) ? 1.0 - alpha : alpha * p_hat[i] / rest;
  }
  return out;
}

inline ProbDist project_to_boundary(const CredalTarget& target, const ProbDist& p_hat) {
  return ProbDist(project_to_boundary(target, p_hat.values()));
}

/// sum_i p(i) * ln(p(i) / q(i)), logs taken on values clamped to 1e-12.
/// Terms with p(i) = 0 vanish.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  detail::require_same_size(p.size(), q.size(), "kl_divergence");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    sum += p[i] * (safe_log(p[i]) - safe_log(q[i]));
  }
  return sum;
}

inline double kl_divergence(const ProbDist& p, const ProbDist& q) {
  return kl_divergence(p.values(), q.values());
}

inline double cross_entropy(std::span<const double> p, std::span<const double> q) {
  detail::require_same_size(p.size(), q.size(), "cross_entropy");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    sum += p[i] * safe_log(q[i]);
  }
  return -sum;
}

inline double cross_entropy(const ProbDist& p, const ProbDist& q) {
  return cross_entropy(p.values(), q.values());
}

/// d/dq of cross_entropy(p, q).
inline std::vector<double> cross_entropy_grad(std::span<const double> p, std::span<const double> q) {
  detail::require_same_size(p.size(), q.size(), "cross_entropy_grad");
  std::vector<double> g(q.size(), 0.0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (p[i] != 0.0) g[i] = -p[i] / std::max(q[i], kLogEps);
  }
  return g;
}

/// Cross-entropy against the degenerate distribution on `label`.
inline double cross_entropy_hard(std::size_t label, std::span<const double> q) {
  if (label >= q.size()) throw DimensionMismatch("cross_entropy_hard: label out of range");
  return -safe_log(q[label]);
}

inline std::vector<double> cross_entropy_hard_grad(std::size_t label, std::span<const double> q) {
  if (label >= q.size()) throw DimensionMismatch("cross_entropy_hard_grad: label out of range");
  std::vector<double> g(q.size(), 0.0);
  g[label] = -1.0 / std::max(q[label], kLogEps);
  return g;
}

/// Optimistic superset loss with KL as base loss.
inline double osl_kl_loss(const CredalTarget& target, std::span<const double> p_hat) {
  if (credal_contains(target, p_hat)) return 0.0;
  const auto p_r = project_to_boundary(target, p_hat);
  return std::max(0.0, kl_divergence(p_r, p_hat));
}

inline double osl_kl_loss(const CredalTarget& target, const ProbDist& p_hat) {
  return osl_kl_loss(target, p_hat.values());
}

/// Gradient of osl_kl_loss with respect to the entries of p_hat.
///
/// Outside Q the loss equals (1-a) ln((1-a)/p_hat(y)) + a ln(a/S) with
/// S = sum_{j != y} p_hat(j), so the full derivative is -(1-a)/p_hat(y) at y
/// and -a/S elsewhere. The detached form -p_r(i)/p_hat(i) gives the same
/// vector up to rounding because p_r minimizes KL over Q. Members of Q
/// (boundary included) get the zero vector.
inline std::vector<double> osl_kl_grad(const CredalTarget& target, std::span<const double> p_hat,
                                       ProjectionGradient mode = ProjectionGradient::Full) {
  std::vector<double> g(p_hat.size(), 0.0);
  if (credal_contains(target, p_hat)) return g;
  const std::size_t y = target.ref_class();
  const double alpha = target.alpha();
  if (mode == ProjectionGradient::Detached) {
    const auto p_r = project_to_boundary(target, p_hat);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (p_r[i] != 0.0) g[i] = -p_r[i] / std::max(p_hat[i], kLogEps);
    }
    return g;
  }
  double rest = 0.0;
  for (std::size_t i = 0; i < p_hat.size(); ++i) {
    if (i != y) rest += p_hat[i];
  }
  if (!(rest > 0.0)) throw NumericError("osl_kl_grad: prediction puts no mass outside the reference class");
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = (i == y) ? -(1.0 - alpha) / std::max(p_hat[y], kLogEps) : -alpha / rest;
  }
  return g;
}

inline std::vector<double> osl_kl_grad(const CredalTarget& target, const ProbDist& p_hat,
                                       ProjectionGradient mode = ProjectionGradient::Full) {
  return osl_kl_grad(target, p_hat.values(), mode);
}

}  // namespace cssl
