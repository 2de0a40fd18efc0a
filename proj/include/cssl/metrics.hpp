#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "cssl/data_synth.hpp"
#include "cssl/neural.hpp"
#include "cssl/prob.hpp"

namespace cssl {

inline constexpr int kDefaultEceBins = 15;

struct BinStat {
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

struct EvalReport {
  double error_rate = 0.0;
  double ece = 0.0;
  std::vector<BinStat> bins;
  std::size_t n = 0;
};

inline double error_rate(std::span<const ProbDist> predictions, std::span<const std::size_t> labels) {
  detail::require_same_size(predictions.size(), labels.size(), "error_rate");
  if (predictions.empty()) throw std::invalid_argument("error_rate of empty input");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) wrong += predictions[i].argmax() != labels[i];
  return static_cast<double>(wrong) / static_cast<double>(predictions.size());
}

/// Bin of a confidence value: ceil(c * bins), with 0 going to the first bin.
/// Returned zero-based.
inline std::size_t confidence_bin(double confidence, int bins) {
  const double scaled = std::ceil(confidence * static_cast<double>(bins));
  const auto one_based = static_cast<long long>(std::clamp(scaled, 1.0, static_cast<double>(bins)));
  return static_cast<std::size_t>(one_based - 1);
}

/// Expected calibration error over equal-width, right-closed bins of the
/// top-1 confidence. Also fills the per-bin reliability statistics.
inline EvalReport ece(std::span<const ProbDist> predictions, std::span<const std::size_t> labels,
                      int bins = kDefaultEceBins) {
  if (bins < 1) throw std::invalid_argument("ece needs at least one bin");
  detail::require_same_size(predictions.size(), labels.size(), "ece");
  if (predictions.empty()) throw std::invalid_argument("ece of empty input");

  EvalReport r;
  r.n = predictions.size();
  r.bins.assign(static_cast<std::size_t>(bins), {});
  std::vector<double> conf_sum(r.bins.size(), 0.0);
  std::vector<double> correct(r.bins.size(), 0.0);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double c = predictions[i].max();
    const bool ok = predictions[i].argmax() == labels[i];
    wrong += !ok;
    const std::size_t b = confidence_bin(c, bins);
    r.bins[b].count += 1;
    conf_sum[b] += c;
    correct[b] += ok ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(r.n);
  for (std::size_t b = 0; b < r.bins.size(); ++b) {
    auto& s = r.bins[b];
    if (s.count == 0) continue;
    const double cnt = static_cast<double>(s.count);
    s.mean_confidence = conf_sum[b] / cnt;
    s.accuracy = correct[b] / cnt;
    r.ece += (cnt / n) * std::abs(s.accuracy - s.mean_confidence);
  }
  r.error_rate = static_cast<double>(wrong) / n;
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (std::size_t b = 0; b < r.bins.size(); ++b) {
    const auto& s = r.bins[b];
    bins.push_back({{"bin", b + 1}, {"count", s.count}, {"mean_confidence", s.mean_confidence}, {"accuracy", s.accuracy}});
  }
  return {{"n", r.n}, {"error_rate", r.error_rate}, {"ece", r.ece}, {"bins", bins}};
}

/// Mean squared gap between the model's and the truth's class-1 probability
/// over a grid of 1-D inputs.
inline double fn_mse_to_truth(const MlpModel& model, const TruthFn& truth, std::span<const double> grid) {
  if (grid.empty()) throw std::invalid_argument("fn_mse_to_truth needs a non-empty grid");
  double sum = 0.0;
  for (double x : grid) {
    const double xs[1] = {x};
    const double d = predict(model, xs)[1] - truth(xs)[1];
    sum += d * d;
  }
  return sum / static_cast<double>(grid.size());
}

/// n evenly spaced points on [lo, hi], endpoints included.
inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return g;
}

}  // namespace cssl
