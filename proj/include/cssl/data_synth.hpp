#pragma once

// Seeded synthetic semi-supervised tasks and the weak/strong perturbations
// used in place of image augmentation.
//
//   SIGMOID_1D  x ~ U[0,1], P(class 1 | x) = 1 / (1 + exp(-steepness (x - midpoint)))
//   GAUSS_BLOBS K unit-variance spherical Gaussians with means at
//               separation * (cos 2 pi k/K, sin 2 pi k/K, 0, ...) (dim >= 2)
//               or separation * (k - (K-1)/2) (dim == 1); equal class priors.
//
// Labeled, unlabeled and test sets come from separate substreams of the task
// seed, so they are distinct draws.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cssl/csv.hpp"
#include "cssl/prob.hpp"
#include "cssl/rng.hpp"

namespace cssl {

using Vec = std::vector<double>;

struct LabeledExample {
  Vec x;
  std::size_t y;
};

struct UnlabeledExample {
  Vec x;
};

enum class TaskKind { Sigmoid1D, GaussBlobs };

/// Ground-truth conditional p*(. | x) of a synthetic task.
class TruthFn {
 public:
  static TruthFn sigmoid(double steepness, double midpoint) {
    TruthFn t;
    t.kind_ = TaskKind::Sigmoid1D;
    t.k_ = 2;
    t.dim_ = 1;
    t.steepness_ = steepness;
    t.midpoint_ = midpoint;
    return t;
  }

  static TruthFn blobs(std::size_t k, std::size_t dim, double separation) {
    if (k < 2) throw std::invalid_argument("blobs task needs K >= 2");
    if (dim == 0) throw std::invalid_argument("blobs task needs dim >= 1");
    TruthFn t;
    t.kind_ = TaskKind::GaussBlobs;
    t.k_ = k;
    t.dim_ = dim;
    for (std::size_t c = 0; c < k; ++c) {
      Vec m(dim, 0.0);
      if (dim == 1) {
        m[0] = separation * (static_cast<double>(c) - 0.5 * static_cast<double>(k - 1));
      } else {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
        m[0] = separation * std::cos(angle);
        m[1] = separation * std::sin(angle);
      }
      t.means_.push_back(std::move(m));
    }
    return t;
  }

  TaskKind kind() const noexcept { return kind_; }
  std::size_t n_classes() const noexcept { return k_; }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<Vec>& means() const noexcept { return means_; }

  /// P(class 1 | x) for the 1-D sigmoid task.
  double positive(double x) const { return 1.0 / (1.0 + std::exp(-steepness_ * (x - midpoint_))); }

  /// Draws y ~ p*(. | x) by inverting the class CDF with one uniform.
  std::size_t sample_label(std::span<const double> x, Rng& rng) const {
    const ProbDist p = (*this)(x);
    const double u = rng.uniform();
    double cum = 0.0;
    for (std::size_t c = 0; c + 1 < p.size(); ++c) {
      cum += p[c];
      if (u < cum) return c;
    }
    return p.size() - 1;
  }

  ProbDist operator()(std::span<const double> x) const {
    if (x.size() != dim_) throw DimensionMismatch("truth function: wrong feature dimension");
    if (kind_ == TaskKind::Sigmoid1D) {
      const double p1 = positive(x[0]);
      return ProbDist({1.0 - p1, p1});
    }
    // Posterior of an equal-weight mixture of unit-variance Gaussians.
    std::vector<double> logit(k_);
    for (std::size_t c = 0; c < k_; ++c) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < dim_; ++i) d2 += (x[i] - means_[c][i]) * (x[i] - means_[c][i]);
      logit[c] = -0.5 * d2;
    }
    const double m = *std::max_element(logit.begin(), logit.end());
    double sum = 0.0;
    for (double& v : logit) sum += (v = std::exp(v - m));
    for (double& v : logit) v /= sum;
    return ProbDist(std::move(logit));
  }

 private:
  TaskKind kind_ = TaskKind::Sigmoid1D;
  std::size_t k_ = 2;
  std::size_t dim_ = 1;
  double steepness_ = 10.0;
  double midpoint_ = 0.5;
  std::vector<Vec> means_;
};

struct SyntheticTask {
  TruthFn truth;
  std::vector<LabeledExample> labeled;
  std::vector<UnlabeledExample> unlabeled;
  std::vector<LabeledExample> test;
  std::uint64_t seed = 0;

  std::size_t n_classes() const noexcept { return truth.n_classes(); }
  std::size_t dim() const noexcept { return truth.dim(); }

  /// Empirical class frequencies of the labeled split (uniform if it is empty).
  ProbDist class_prior() const {
    const std::size_t k = n_classes();
    if (labeled.empty()) return ProbDist::uniform(k);
    std::vector<double> counts(k, 0.0);
    for (const auto& e : labeled) counts.at(e.y) += 1.0;
    return ProbDist::normalized(counts);
  }
};

inline SyntheticTask gen_sigmoid_task(std::size_t n_labeled, std::size_t n_unlabeled, double steepness,
                                      double midpoint, std::uint64_t seed, std::size_t n_test = 0) {
  SyntheticTask task{TruthFn::sigmoid(steepness, midpoint), {}, {}, {}, seed};
  const Rng root(seed);
  auto sample_labeled = [&](Rng rng, std::size_t n, std::vector<LabeledExample>& out) {
    for (std::size_t i = 0; i < n; ++i) {
      Vec x{rng.uniform()};
      const std::size_t y = task.truth.sample_label(x, rng);
      out.push_back({std::move(x), y});
    }
  };
  sample_labeled(root.substream("labeled"), n_labeled, task.labeled);
  sample_labeled(root.substream("test"), n_test, task.test);
  Rng ur = root.substream("unlabeled");
  for (std::size_t i = 0; i < n_unlabeled; ++i) task.unlabeled.push_back({{ur.uniform()}});
  return task;
}

/// Labeled points are stratified (class i mod K); unlabeled and test points
/// draw their class uniformly. Sampling the class first and x given the class
/// is the same joint law as sampling x and then y ~ p*(. | x).
inline SyntheticTask gen_blobs_task(std::size_t k, std::size_t dim, double separation, std::size_t n_labeled,
                                    std::size_t n_unlabeled, std::uint64_t seed, std::size_t n_test = 0) {
  SyntheticTask task{TruthFn::blobs(k, dim, separation), {}, {}, {}, seed};
  const Rng root(seed);
  auto draw_x = [&](Rng& rng, std::size_t c) {
    Vec x(dim);
    for (std::size_t i = 0; i < dim; ++i) x[i] = task.truth.means()[c][i] + rng.normal();
    return x;
  };
  Rng lr = root.substream("labeled");
  for (std::size_t i = 0; i < n_labeled; ++i) {
    const std::size_t c = i % k;
    task.labeled.push_back({draw_x(lr, c), c});
  }
  Rng ur = root.substream("unlabeled");
  for (std::size_t i = 0; i < n_unlabeled; ++i) {
    const auto c = static_cast<std::size_t>(ur.uniform_index(k));
    task.unlabeled.push_back({draw_x(ur, c)});
  }
  Rng tr = root.substream("test");
  for (std::size_t i = 0; i < n_test; ++i) {
    const auto c = static_cast<std::size_t>(tr.uniform_index(k));
    task.test.push_back({draw_x(tr, c), c});
  }
  return task;
}

// ---------------------------------------------------------------------------
// Perturbations

/// x + N(0, sigma_w^2) per coordinate.
inline Vec weak_augment(std::span<const double> x, double sigma_w, Rng& rng) {
  if (sigma_w < 0.0) throw std::invalid_argument("sigma_w must be >= 0");
  Vec out(x.begin(), x.end());
  for (double& v : out) v += sigma_w * rng.normal();
  return out;
}

/// x + N(0, sigma_s^2) per coordinate, then each coordinate zeroed with
/// probability mask_prob.
inline Vec strong_augment(std::span<const double> x, double sigma_s, double mask_prob, Rng& rng) {
  if (sigma_s < 0.0) throw std::invalid_argument("sigma_s must be >= 0");
  if (!(mask_prob >= 0.0 && mask_prob < 1.0)) throw std::invalid_argument("mask_prob must lie in [0,1)");
  Vec out(x.begin(), x.end());
  for (double& v : out) {
    v += sigma_s * rng.normal();
    if (rng.bernoulli(mask_prob)) v = 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV import/export
//
// Header: x0,x1,...,x{d-1}[,label]. One row per example, 17 significant digits.

struct Dataset {
  std::vector<Vec> x;
  std::optional<std::vector<std::size_t>> labels;
};

inline void write_dataset_csv(std::ostream& out, std::span<const LabeledExample> data) {
  const std::size_t d = data.empty() ? 0 : data.front().x.size();
  for (std::size_t i = 0; i < d; ++i) out << 'x' << i << ',';
  out << "label\n";
  for (const auto& e : data) {
    for (double v : e.x) out << format_double(v) << ',';
    out << e.y << '\n';
  }
}

inline void write_dataset_csv(std::ostream& out, std::span<const UnlabeledExample> data) {
  const std::size_t d = data.empty() ? 0 : data.front().x.size();
  for (std::size_t i = 0; i < d; ++i) out << (i ? "," : "") << 'x' << i;
  out << '\n';
  for (const auto& e : data) {
    for (std::size_t i = 0; i < e.x.size(); ++i) out << (i ? "," : "") << format_double(e.x[i]);
    out << '\n';
  }
}

inline Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("dataset CSV: missing header");
  const auto header = split_csv_line(line);
  const bool labeled = !header.empty() && header.back() == "label";
  const std::size_t d = header.size() - (labeled ? 1 : 0);
  for (std::size_t i = 0; i < d; ++i) {
    if (header[i] != "x" + std::to_string(i)) {
      throw std::invalid_argument("dataset CSV: unexpected column '" + header[i] + "'");
    }
  }
  Dataset ds;
  if (labeled) ds.labels.emplace();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::invalid_argument("dataset CSV line " + std::to_string(line_no) + ": wrong column count");
    }
    Vec x(d);
    try {
      for (std::size_t i = 0; i < d; ++i) x[i] = std::stod(cells[i]);
      if (labeled) ds.labels->push_back(static_cast<std::size_t>(std::stoul(cells.back())));
    } catch (const std::logic_error&) {
      throw std::invalid_argument("dataset CSV line " + std::to_string(line_no) + ": malformed number");
    }
    ds.x.push_back(std::move(x));
  }
  return ds;
}

}  // namespace cssl
