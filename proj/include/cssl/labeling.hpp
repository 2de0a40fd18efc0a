#pragma once

// Pseudo-label construction for unlabeled instances.
//
// Four strategies share the same input, the model's prediction on a weakly
// perturbed view:
//   CSSL      credal target {p : p(y) >= 1 - alpha} with alpha from the
//             (optionally distribution-aligned) confidence; never skips.
//   LSMatch   label-smoothed distribution with the same adaptive alpha.
//   FixMatch  hard argmax label when max p_hat >= tau, otherwise skipped.
//   UPSMatch  FixMatch gate plus an uncertainty gate u <= kappa.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cssl/credal.hpp"
#include "cssl/prob.hpp"

namespace cssl {

struct HardLabel {
  std::size_t cls;
  friend bool operator==(const HardLabel&, const HardLabel&) = default;
};

struct SoftLabel {
  ProbDist target;
  friend bool operator==(const SoftLabel&, const SoftLabel&) = default;
};

struct SkipLabel {
  friend bool operator==(const SkipLabel&, const SkipLabel&) = default;
};

using PseudoLabel = std::variant<HardLabel, SoftLabel, CredalTarget, SkipLabel>;

inline bool is_skip(const PseudoLabel& label) { return std::holds_alternative<SkipLabel>(label); }

/// Loss of a prediction against a pseudo-label: infimum KL loss for credal
/// targets, cross-entropy for hard and soft ones, 0 for skipped instances.
inline double pseudo_label_loss(const PseudoLabel& label, std::span<const double> p_hat) {
  struct Visitor {
    std::span<const double> p;
    double operator()(const HardLabel& h) const { return cross_entropy_hard(h.cls, p); }
    double operator()(const SoftLabel& s) const { return cross_entropy(s.target.values(), p); }
    double operator()(const CredalTarget& c) const { return osl_kl_loss(c, p); }
    double operator()(const SkipLabel&) const { return 0.0; }
  };
  return std::visit(Visitor{p_hat}, label);
}

inline std::vector<double> pseudo_label_grad(const PseudoLabel& label, std::span<const double> p_hat,
                                             ProjectionGradient mode = ProjectionGradient::Full) {
  struct Visitor {
    std::span<const double> p;
    ProjectionGradient mode;
    std::vector<double> operator()(const HardLabel& h) const { return cross_entropy_hard_grad(h.cls, p); }
    std::vector<double> operator()(const SoftLabel& s) const { return cross_entropy_grad(s.target.values(), p); }
    std::vector<double> operator()(const CredalTarget& c) const { return osl_kl_grad(c, p, mode); }
    std::vector<double> operator()(const SkipLabel&) const { return std::vector<double>(p.size(), 0.0); }
  };
  return std::visit(Visitor{p_hat, mode}, label);
}

// ---------------------------------------------------------------------------
// Distribution alignment

/// Class prior and a moving average of recent predictions. The running mean
/// starts uniform and is kept clamped to >= 1e-12 and normalized.
class AlignmentState {
 public:
  AlignmentState(ProbDist class_prior, ProbDist running_mean, double decay)
      : class_prior_(std::move(class_prior)), running_mean_(std::move(running_mean)), decay_(decay) {
    detail::require_same_size(class_prior_.size(), running_mean_.size(), "AlignmentState");
    if (!(decay >= 0.0 && decay < 1.0)) {
      throw std::invalid_argument("alignment decay must lie in [0,1)");
    }
    running_mean_ = clamp_and_normalize(running_mean_.values());
  }

  AlignmentState(ProbDist class_prior, double decay)
      : AlignmentState(class_prior, ProbDist::uniform(class_prior.size()), decay) {}

  const ProbDist& class_prior() const noexcept { return class_prior_; }
  const ProbDist& running_mean() const noexcept { return running_mean_; }
  double decay() const noexcept { return decay_; }
  std::size_t size() const noexcept { return class_prior_.size(); }

  static ProbDist clamp_and_normalize(std::span<const double> v) {
    std::vector<double> c(v.begin(), v.end());
    for (double& x : c) x = std::max(x, kLogEps);
    return ProbDist::normalized(c);
  }

 private:
  ProbDist class_prior_;
  ProbDist running_mean_;
  double decay_;
};

/// q(y) = p_hat(y) * prior(y) / running_mean(y), unnormalized.
inline std::vector<double> align_scores(std::span<const double> p_hat, const AlignmentState& state) {
  detail::require_same_size(p_hat.size(), state.size(), "align_scores");
  std::vector<double> q(p_hat.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    q[i] = p_hat[i] * state.class_prior()[i] / std::max(state.running_mean()[i], kLogEps);
  }
  return q;
}

inline std::vector<double> align_scores(const ProbDist& p_hat, const AlignmentState& state) {
  return align_scores(p_hat.values(), state);
}

inline AlignmentState update_alignment(const AlignmentState& state, const ProbDist& batch_mean_prediction) {
  detail::require_same_size(batch_mean_prediction.size(), state.size(), "update_alignment");
  std::vector<double> m(state.size());
  const double d = state.decay();
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = d * state.running_mean()[i] + (1.0 - d) * batch_mean_prediction[i];
  }
  return AlignmentState(state.class_prior(), AlignmentState::clamp_and_normalize(m), d);
}

// ---------------------------------------------------------------------------
// Strategies

enum class StrategyKind { Cssl, LsMatch, FixMatchHard, UpsMatch };

inline std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Cssl: return "cssl";
    case StrategyKind::LsMatch: return "lsmatch";
    case StrategyKind::FixMatchHard: return "fixmatch";
    case StrategyKind::UpsMatch: return "upsmatch";
  }
  return "unknown";
}

inline bool is_thresholded(StrategyKind kind) {
  return kind == StrategyKind::FixMatchHard || kind == StrategyKind::UpsMatch;
}

struct StrategyConfig {
  StrategyKind kind = StrategyKind::Cssl;
  double tau = 0.95;    // FixMatch/UPSMatch confidence threshold
  double kappa = std::numeric_limits<double>::infinity();  // UPSMatch uncertainty threshold
  double min_alpha = 0.0;  // CSSL/LSMatch lower bound on alpha
  bool use_alignment = true;
  double alignment_decay = 0.999;
  int mc_samples = 8;
  double dropout_rate = 0.3;

  void validate() const {
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must lie in [0,1]");
    if (!(kappa >= 0.0)) throw std::invalid_argument("kappa must be >= 0");
    if (!(min_alpha >= 0.0 && min_alpha <= 1.0)) throw std::invalid_argument("min_alpha must lie in [0,1]");
    if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("dropout_rate must lie in [0,1)");
    if (!(alignment_decay >= 0.0 && alignment_decay < 1.0)) {
      throw std::invalid_argument("alignment_decay must lie in [0,1)");
    }
  }
};

struct AlphaChoice {
  std::size_t ref_class;
  double alpha;
};

inline AlphaChoice adaptive_alpha(std::span<const double> q, double min_alpha) {
  double sum = 0.0;
  for (double v : q) sum += v;
  if (!(sum > 0.0)) throw NumericError("adaptive_alpha: scores sum to zero");
  const std::size_t y = argmax(q);
  const double alpha = std::clamp(std::max(min_alpha, 1.0 - q[y] / sum), 0.0, 1.0);
  return {y, alpha};
}

namespace detail {

inline AlphaChoice choose_alpha(const ProbDist& p_hat, const AlignmentState& state, const StrategyConfig& cfg) {
  if (cfg.use_alignment) return adaptive_alpha(align_scores(p_hat, state), cfg.min_alpha);
  return adaptive_alpha(p_hat.values(), cfg.min_alpha);
}

}  // namespace detail

inline PseudoLabel make_cssl_label(const ProbDist& p_hat, const AlignmentState& state, const StrategyConfig& cfg) {
  const auto [y, alpha] = detail::choose_alpha(p_hat, state, cfg);
  return CredalTarget(y, alpha);
}

/// Smoothed target q'(y) = 1 - (K-1) alpha / K, q'(y') = alpha / K.
inline ProbDist smoothed_target(std::size_t k, std::size_t y, double alpha) {
  const double kd = static_cast<double>(k);
  std::vector<double> q(k, alpha / kd);
  q.at(y) = 1.0 - (kd - 1.0) * alpha / kd;
  return ProbDist(std::move(q));
}

inline PseudoLabel make_lsmatch_label(const ProbDist& p_hat, const AlignmentState& state, const StrategyConfig& cfg) {
  const auto [y, alpha] = detail::choose_alpha(p_hat, state, cfg);
  return SoftLabel{smoothed_target(p_hat.size(), y, alpha)};
}

inline PseudoLabel make_fixmatch_label(const ProbDist& p_hat, const StrategyConfig& cfg) {
  if (p_hat.max() >= cfg.tau) return HardLabel{p_hat.argmax()};
  return SkipLabel{};
}

inline PseudoLabel make_upsmatch_label(const ProbDist& p_hat, double uncertainty, const StrategyConfig& cfg) {
  if (uncertainty < 0.0) throw std::invalid_argument("uncertainty must be >= 0");
  if (p_hat.max() >= cfg.tau && uncertainty <= cfg.kappa) return HardLabel{p_hat.argmax()};
  return SkipLabel{};
}

/// Population standard deviation, across stochastic predictions, of the
/// probability assigned to the argmax class of the mean prediction.
inline double predictive_uncertainty(std::span<const ProbDist> samples) {
  if (samples.size() < 2) throw std::invalid_argument("predictive_uncertainty needs at least 2 samples");
  const std::size_t k = samples.front().size();
  std::vector<double> mean(k, 0.0);
  for (const auto& s : samples) {
    detail::require_same_size(s.size(), k, "predictive_uncertainty");
    for (std::size_t i = 0; i < k; ++i) mean[i] += s[i];
  }
  const double n = static_cast<double>(samples.size());
  for (double& m : mean) m /= n;
  const std::size_t c = argmax(mean);
  double var = 0.0;
  for (const auto& s : samples) {
    const double d = s[c] - mean[c];
    var += d * d;
  }
  return std::sqrt(var / n);
}

/// Dispatch on cfg.kind. `uncertainty` is only read by UPSMatch.
inline PseudoLabel make_pseudo_label(const ProbDist& p_hat, const AlignmentState& state, const StrategyConfig& cfg,
                                     double uncertainty = 0.0) {
  switch (cfg.kind) {
    case StrategyKind::Cssl: return make_cssl_label(p_hat, state, cfg);
    case StrategyKind::LsMatch: return make_lsmatch_label(p_hat, state, cfg);
    case StrategyKind::FixMatchHard:
    case StrategyKind::UpsMatch: {
      // Alignment, when enabled, reweights before thresholding (FixMatch with DA).
      const ProbDist scores = cfg.use_alignment ? ProbDist::normalized(align_scores(p_hat, state)) : p_hat;
      if (cfg.kind == StrategyKind::UpsMatch) return make_upsmatch_label(scores, uncertainty, cfg);
      return make_fixmatch_label(scores, cfg);
    }
  }
  return SkipLabel{};
}

}  // namespace cssl
