#pragma once

// Semi-supervised training loop.
//
// Each step draws B labeled and mu*B unlabeled instances, builds weak views
// (and strong views for unlabeled instances), turns weak-view predictions
// into pseudo-labels with the configured strategy and minimizes
//
//   L = mean_labeled CE(y, p(weak x)) + lambda_u * (1/(mu B)) sum_unlabeled L(label, p(strong x))
//
// Skipped pseudo-labels contribute 0 but still count in mu*B. Weak-view
// predictions for pseudo-labeling are deterministic and never differentiated.
// Parameters follow SGD with Nesterov momentum under the cosine schedule,
// an EMA shadow is updated after every step, and evaluation uses the shadow.
//
// Every random decision draws from a named substream of the run seed, one
// per purpose, so a run is a pure function of (config, task).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cssl/credal.hpp"
#include "cssl/csv.hpp"
#include "cssl/data_synth.hpp"
#include "cssl/labeling.hpp"
#include "cssl/metrics.hpp"
#include "cssl/neural.hpp"
#include "cssl/rng.hpp"

namespace cssl {

struct TrainConfig {
  std::size_t batch_size = 64;  // B
  std::size_t mu = 7;
  double lambda_u = 1.0;
  double eta = 0.03;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 5e-4;
  long long total_steps = 1 << 20;
  std::uint64_t seed = 0;
  StrategyConfig strategy;
  double ema_decay = 0.999;
  double sigma_w = 0.1;
  double sigma_s = 0.5;
  double mask_prob = 0.2;
  long long eval_every = 100;
  bool detach_projection = false;
  std::vector<std::size_t> hidden = {64};
  Activation activation = Activation::Relu;
  double dropout_rate = 0.0;  // training-time dropout of the classifier
  int ece_bins = kDefaultEceBins;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (mu < 1) throw std::invalid_argument("mu must be >= 1");
    if (!(lambda_u >= 0.0)) throw std::invalid_argument("lambda_u must be >= 0");
    if (!(eta > 0.0)) throw std::invalid_argument("eta must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be >= 0");
    if (total_steps < 1) throw std::invalid_argument("total_steps must be >= 1");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw std::invalid_argument("ema_decay must lie in [0,1)");
    if (!(sigma_w >= 0.0)) throw std::invalid_argument("sigma_w must be >= 0");
    if (!(sigma_s >= sigma_w)) throw std::invalid_argument("sigma_s must be >= sigma_w");
    if (!(mask_prob >= 0.0 && mask_prob < 1.0)) throw std::invalid_argument("mask_prob must lie in [0,1)");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("dropout_rate must lie in [0,1)");
    if (ece_bins < 1) throw std::invalid_argument("ece_bins must be >= 1");
    strategy.validate();
  }

  ProjectionGradient projection_gradient() const {
    return detach_projection ? ProjectionGradient::Detached : ProjectionGradient::Full;
  }
};

struct RunRow {
  long long step = 0;
  double lr = 0.0;
  double labeled_loss = 0.0;
  double unlabeled_loss = 0.0;
  double total_loss = 0.0;
  double mask_rate = 0.0;
  double mean_alpha = 0.0;
  double test_error = 0.0;  // EMA model
  double test_ece = 0.0;    // EMA model
  double raw_test_error = 0.0;
  double raw_test_ece = 0.0;
};

/// One row per evaluation point.
struct RunRecord {
  std::vector<RunRow> rows;

  const RunRow& last() const { return rows.back(); }

  /// Mean EMA test error over the final `fraction` of evaluation points
  /// (at least one point).
  double tail_mean_error(double fraction = 0.05) const {
    if (rows.empty()) throw std::logic_error("tail_mean_error of empty record");
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(rows.size()))));
    double s = 0.0;
    for (std::size_t i = rows.size() - n; i < rows.size(); ++i) s += rows[i].test_error;
    return s / static_cast<double>(n);
  }
};

inline void write_run_csv(std::ostream& out, const RunRecord& record) {
  out << "step,lr,labeled_loss,unlabeled_loss,total_loss,mask_rate,mean_alpha,test_error,test_ece,raw_test_error,"
         "raw_test_ece\n";
  for (const auto& r : record.rows) {
    out << r.step << ',' << format_double(r.lr) << ',' << format_double(r.labeled_loss) << ','
        << format_double(r.unlabeled_loss) << ',' << format_double(r.total_loss) << ',' << format_double(r.mask_rate)
        << ',' << format_double(r.mean_alpha) << ',' << format_double(r.test_error) << ','
        << format_double(r.test_ece) << ',' << format_double(r.raw_test_error) << ','
        << format_double(r.raw_test_ece) << '\n';
  }
}

/// Thrown when a step produces a non-finite loss; carries the rows logged so far.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, RunRecord partial, long long step)
      : NumericError(what), partial_(std::move(partial)), step_(step) {}
  const RunRecord& partial() const noexcept { return partial_; }
  long long step() const noexcept { return step_; }

 private:
  RunRecord partial_;
  long long step_;
};

// ---------------------------------------------------------------------------
// Batches

/// Draws indices in shuffled passes over a pool, reshuffling at the end of
/// each pass.
class CyclicSampler {
 public:
  CyclicSampler(std::size_t pool_size, Rng rng) : order_(pool_size), rng_(rng) {
    if (pool_size == 0) throw std::invalid_argument("cannot sample from an empty pool");
    for (std::size_t i = 0; i < pool_size; ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      rng_.shuffle(order_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

struct Batches {
  std::vector<LabeledExample> labeled;
  std::vector<UnlabeledExample> unlabeled;
};

class BatchComposer {
 public:
  BatchComposer(std::size_t n_labeled, std::size_t n_unlabeled, const Rng& rng)
      : labeled_(n_labeled, rng.substream("batches-labeled")),
        unlabeled_(n_unlabeled, rng.substream("batches-unlabeled")) {}

  Batches next(std::span<const LabeledExample> labeled, std::span<const UnlabeledExample> unlabeled,
               std::size_t batch_size, std::size_t mu) {
    Batches b;
    b.labeled.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) b.labeled.push_back(labeled[labeled_.next()]);
    b.unlabeled.reserve(mu * batch_size);
    for (std::size_t i = 0; i < mu * batch_size; ++i) b.unlabeled.push_back(unlabeled[unlabeled_.next()]);
    return b;
  }

 private:
  CyclicSampler labeled_;
  CyclicSampler unlabeled_;
};

inline Batches compose_batches(std::span<const LabeledExample> labeled, std::span<const UnlabeledExample> unlabeled,
                               std::size_t batch_size, std::size_t mu, BatchComposer& composer) {
  if (labeled.empty() || unlabeled.empty()) throw std::invalid_argument("compose_batches: empty pool");
  return composer.next(labeled, unlabeled, batch_size, mu);
}

// ---------------------------------------------------------------------------
// Losses

struct LossEval {
  double value = 0.0;
  std::vector<double> grad;  // empty unless requested
};

/// Mean cross-entropy of hard labels against predictions on the given
/// (already perturbed) inputs. With a dropout stream the passes are stochastic.
inline LossEval labeled_loss(std::span<const LabeledExample> batch, const MlpModel& model, Rng* dropout_rng,
                             bool want_grad) {
  if (batch.empty()) throw std::invalid_argument("labeled_loss: empty batch");
  LossEval out;
  if (want_grad) out.grad.assign(model.n_params(), 0.0);
  const double scale = 1.0 / static_cast<double>(batch.size());
  double sum = 0.0;
  for (const auto& e : batch) {
    const auto trace = forward_trace(model, e.x, dropout_rng != nullptr, dropout_rng);
    sum += cross_entropy_hard(e.y, trace.probs);
    if (want_grad) backward_accumulate(model, trace, cross_entropy_hard_grad(e.y, trace.probs), out.grad, scale);
  }
  out.value = sum * scale;
  return out;
}

struct UnlabeledViews {
  std::vector<Vec> weak;
  std::vector<Vec> strong;
};

struct UnlabeledDiagnostics {
  double mask_rate = 0.0;
  double mean_alpha = 0.0;
  std::vector<PseudoLabel> labels;
  std::vector<ProbDist> weak_predictions;

  ProbDist mean_weak_prediction() const {
    const std::size_t k = weak_predictions.front().size();
    std::vector<double> m(k, 0.0);
    for (const auto& p : weak_predictions) {
      for (std::size_t i = 0; i < k; ++i) m[i] += p[i];
    }
    return ProbDist::normalized(m);
  }
};

struct UnlabeledLoss {
  LossEval loss;
  UnlabeledDiagnostics diagnostics;
};

inline std::vector<ProbDist> weak_predictions(const MlpModel& model, std::span<const Vec> weak) {
  std::vector<ProbDist> out;
  out.reserve(weak.size());
  for (const auto& x : weak) out.push_back(predict(model, x));
  return out;
}

/// Unlabeled loss of one batch. `cached_weak`, when given, replaces the
/// weak-view forward passes (they never carry gradient, so the result is the
/// same). UPSMatch estimates uncertainty from `strategy.mc_samples` dropout
/// passes at `strategy.dropout_rate` over the weak view, drawn from `mc_rng`.
inline UnlabeledLoss unlabeled_loss(const UnlabeledViews& views, const MlpModel& model, const StrategyConfig& strategy,
                                    const AlignmentState& alignment, ProjectionGradient projection,
                                    Rng* dropout_rng, Rng& mc_rng, bool want_grad,
                                    const std::vector<ProbDist>* cached_weak = nullptr) {
  detail::require_same_size(views.weak.size(), views.strong.size(), "unlabeled_loss views");
  if (views.weak.empty()) throw std::invalid_argument("unlabeled_loss: empty batch");
  UnlabeledLoss out;
  auto& diag = out.diagnostics;
  diag.weak_predictions = cached_weak ? *cached_weak : weak_predictions(model, views.weak);
  detail::require_same_size(diag.weak_predictions.size(), views.weak.size(), "unlabeled_loss cached predictions");

  std::optional<MlpModel> mc_model;
  if (strategy.kind == StrategyKind::UpsMatch && strategy.mc_samples >= 2) {
    mc_model = model;
    mc_model->set_dropout_rate(strategy.dropout_rate);
  }

  const std::size_t n = views.weak.size();
  const double scale = 1.0 / static_cast<double>(n);
  if (want_grad) out.loss.grad.assign(model.n_params(), 0.0);
  double sum = 0.0;
  std::size_t skipped = 0;
  double alpha_sum = 0.0;
  std::size_t alpha_count = 0;
  diag.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double uncertainty = 0.0;
    if (mc_model) {
      std::vector<ProbDist> samples;
      for (int s = 0; s < strategy.mc_samples; ++s) samples.push_back(forward(*mc_model, views.weak[i], true, mc_rng));
      uncertainty = predictive_uncertainty(samples);
    }
    PseudoLabel label = make_pseudo_label(diag.weak_predictions[i], alignment, strategy, uncertainty);
    if (is_skip(label)) {
      ++skipped;
    } else {
      if (const auto* c = std::get_if<CredalTarget>(&label)) {
        alpha_sum += c->alpha();
      } else if (const auto* s = std::get_if<SoftLabel>(&label)) {
        // Smoothed target mass off the reference class recovers alpha.
        alpha_sum += (1.0 - s->target.max()) * static_cast<double>(s->target.size()) /
                     static_cast<double>(s->target.size() - 1);
      }
      ++alpha_count;
      const auto trace = forward_trace(model, views.strong[i], dropout_rng != nullptr, dropout_rng);
      sum += pseudo_label_loss(label, trace.probs);
      if (want_grad) {
        backward_accumulate(model, trace, pseudo_label_grad(label, trace.probs, projection), out.loss.grad, scale);
      }
    }
    diag.labels.push_back(std::move(label));
  }
  out.loss.value = sum * scale;
  diag.mask_rate = static_cast<double>(skipped) / static_cast<double>(n);
  diag.mean_alpha = alpha_count ? alpha_sum / static_cast<double>(alpha_count) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct EvalPair {
  EvalReport ema;
  EvalReport raw;
};

inline EvalReport evaluate(const MlpModel& model, std::span<const LabeledExample> data, int bins) {
  std::vector<ProbDist> preds;
  std::vector<std::size_t> labels;
  preds.reserve(data.size());
  for (const auto& e : data) {
    preds.push_back(predict(model, e.x));
    labels.push_back(e.y);
  }
  return ece(preds, labels, bins);
}

struct TrainResult {
  MlpModel model;
  MlpModel ema_model;
  RunRecord record;
};

inline TrainResult train(const TrainConfig& cfg, const SyntheticTask& task) {
  cfg.validate();
  if (task.labeled.empty() || task.unlabeled.empty()) throw std::invalid_argument("train: empty labeled or unlabeled pool");
  const Rng root(cfg.seed);
  Rng init_rng = root.substream("init");
  Rng aug_labeled = root.substream("augment-labeled");
  Rng aug_unlabeled = root.substream("augment-unlabeled");
  Rng drop_labeled = root.substream("dropout-labeled");
  Rng drop_unlabeled = root.substream("dropout-unlabeled");
  Rng mc_rng = root.substream("mc-dropout");
  BatchComposer composer(task.labeled.size(), task.unlabeled.size(), root);

  std::vector<std::size_t> sizes{task.dim()};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(task.n_classes());
  MlpModel model = MlpModel::initialized(sizes, cfg.activation, cfg.dropout_rate, init_rng);
  OptimizerState opt = OptimizerState::for_model(model, cfg.momentum, cfg.nesterov, cfg.weight_decay);
  EmaShadow ema(model, cfg.ema_decay);
  AlignmentState alignment(task.class_prior(), cfg.strategy.alignment_decay);

  const std::span<const LabeledExample> eval_set =
      task.test.empty() ? std::span<const LabeledExample>(task.labeled) : std::span<const LabeledExample>(task.test);
  Rng* drop_l = cfg.dropout_rate > 0.0 ? &drop_labeled : nullptr;
  Rng* drop_u = cfg.dropout_rate > 0.0 ? &drop_unlabeled : nullptr;

  RunRecord record;
  for (long long k = 0; k < cfg.total_steps; ++k) {
    try {
      const double lr = cosine_lr(cfg.eta, k, cfg.total_steps);
      Batches batch = compose_batches(task.labeled, task.unlabeled, cfg.batch_size, cfg.mu, composer);

      for (auto& e : batch.labeled) e.x = weak_augment(e.x, cfg.sigma_w, aug_labeled);
      UnlabeledViews views;
      views.weak.reserve(batch.unlabeled.size());
      views.strong.reserve(batch.unlabeled.size());
      for (const auto& u : batch.unlabeled) {
        views.weak.push_back(weak_augment(u.x, cfg.sigma_w, aug_unlabeled));
        views.strong.push_back(strong_augment(u.x, cfg.sigma_s, cfg.mask_prob, aug_unlabeled));
      }

      LossEval ll = labeled_loss(batch.labeled, model, drop_l, true);
      UnlabeledLoss ul = unlabeled_loss(views, model, cfg.strategy, alignment, cfg.projection_gradient(), drop_u,
                                        mc_rng, cfg.lambda_u != 0.0);
      const double total = ll.value + cfg.lambda_u * ul.loss.value;
      if (!std::isfinite(total)) throw NumericError("non-finite loss");
      std::vector<double> grad = std::move(ll.grad);
      if (cfg.lambda_u != 0.0) {
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += cfg.lambda_u * ul.loss.grad[i];
      }
      sgd_step(model, grad, opt, lr);
      ema.update(model);
      alignment = update_alignment(alignment, ul.diagnostics.mean_weak_prediction());

      const long long step = k + 1;
      if (step % cfg.eval_every == 0 || step == cfg.total_steps) {
        const EvalReport ema_eval = evaluate(ema.model(), eval_set, cfg.ece_bins);
        const EvalReport raw_eval = evaluate(model, eval_set, cfg.ece_bins);
        record.rows.push_back({step, lr, ll.value, ul.loss.value, total, ul.diagnostics.mask_rate,
                               ul.diagnostics.mean_alpha, ema_eval.error_rate, ema_eval.ece, raw_eval.error_rate,
                               raw_eval.ece});
      }
    } catch (const NumericError& e) {
      throw TrainingAborted(std::string(e.what()) + " at step " + std::to_string(k), std::move(record), k);
    } catch (const InvalidDistribution& e) {
      throw TrainingAborted(std::string(e.what()) + " at step " + std::to_string(k), std::move(record), k);
    }
  }
  return {std::move(model), ema.model(), std::move(record)};
}

// ---------------------------------------------------------------------------
// Plain self-training (no augmentation, thresholding or alignment)

enum class SelfTrainLabel { Hard, Soft, Credal };

inline std::string to_string(SelfTrainLabel m) {
  switch (m) {
    case SelfTrainLabel::Hard: return "hard";
    case SelfTrainLabel::Soft: return "soft";
    case SelfTrainLabel::Credal: return "credal";
  }
  return "unknown";
}

struct SelfTrainConfig {
  std::vector<std::size_t> hidden = {100};
  Activation activation = Activation::Sigmoid;
  double lr = 0.5;
  int iterations = 100;         // relabelings; each is followed by one pass over the pool
  std::size_t batch_size = 32;  // unlabeled instances per SGD step
  double lambda_u = 1.0;
  std::uint64_t seed = 0;
  std::optional<double> forced_alpha;  // credal labels use this alpha instead of 1 - max p
};

/// Pseudo-labels for the whole unlabeled pool under the current model:
/// hard = argmax one-hot, soft = the prediction itself, credal = Q^{1 - max p}.
inline std::vector<PseudoLabel> self_train_labels(const MlpModel& model, std::span<const UnlabeledExample> pool,
                                                  SelfTrainLabel method, std::optional<double> forced_alpha = {}) {
  std::vector<PseudoLabel> labels;
  labels.reserve(pool.size());
  for (const auto& u : pool) {
    const ProbDist p = predict(model, u.x);
    switch (method) {
      case SelfTrainLabel::Hard: labels.emplace_back(HardLabel{p.argmax()}); break;
      case SelfTrainLabel::Soft: labels.emplace_back(SoftLabel{p}); break;
      case SelfTrainLabel::Credal:
        labels.emplace_back(CredalTarget(p.argmax(), forced_alpha.value_or(1.0 - p.max())));
        break;
    }
  }
  return labels;
}

/// Mean pseudo-label loss over the selected unlabeled instances.
inline LossEval pseudo_labeled_loss(const MlpModel& model, std::span<const UnlabeledExample> unlabeled,
                                    std::span<const PseudoLabel> labels, std::span<const std::size_t> members,
                                    bool want_grad) {
  detail::require_same_size(labels.size(), unlabeled.size(), "pseudo_labeled_loss labels");
  LossEval out;
  if (want_grad) out.grad.assign(model.n_params(), 0.0);
  if (members.empty()) return out;
  const double scale = 1.0 / static_cast<double>(members.size());
  double sum = 0.0;
  for (const std::size_t i : members) {
    if (is_skip(labels[i])) continue;
    const auto trace = forward_trace(model, unlabeled[i].x, false, nullptr);
    sum += pseudo_label_loss(labels[i], trace.probs);
    if (want_grad) backward_accumulate(model, trace, pseudo_label_grad(labels[i], trace.probs), out.grad, scale);
  }
  out.value = sum * scale;
  return out;
}

/// Plain self-training. Each iteration relabels the whole unlabeled pool with
/// the current model, then makes one shuffled pass over it in mini-batches;
/// every step minimizes the mean labeled cross-entropy plus lambda_u times
/// the mean pseudo-label loss of the mini-batch.
inline MlpModel self_train_simple(const SelfTrainConfig& cfg, const SyntheticTask& task, SelfTrainLabel method) {
  if (task.labeled.empty()) throw std::invalid_argument("self_train_simple: empty labeled set");
  if (cfg.batch_size < 1) throw std::invalid_argument("self_train_simple: batch_size must be >= 1");
  if (cfg.iterations < 0) throw std::invalid_argument("self_train_simple: iterations must be >= 0");
  const Rng root(cfg.seed);
  Rng init_rng = root.substream("init");
  Rng batch_rng = root.substream("batches");
  std::vector<std::size_t> sizes{task.dim()};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(task.n_classes());
  MlpModel model = MlpModel::initialized(sizes, cfg.activation, 0.0, init_rng);
  OptimizerState opt = OptimizerState::for_model(model, 0.0, false, 0.0);

  std::vector<std::size_t> order(task.unlabeled.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::span<const std::size_t> all(order);
  for (int it = 0; it < cfg.iterations; ++it) {
    const auto labels = self_train_labels(model, task.unlabeled, method, cfg.forced_alpha);
    batch_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size() || start == 0; start += cfg.batch_size) {
      LossEval step = labeled_loss(task.labeled, model, nullptr, true);
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      if (cfg.lambda_u != 0.0 && n > 0) {
        const LossEval u = pseudo_labeled_loss(model, task.unlabeled, labels, all.subspan(start, n), true);
        for (std::size_t i = 0; i < step.grad.size(); ++i) step.grad[i] += cfg.lambda_u * u.grad[i];
      }
      sgd_step(model, step.grad, opt, cfg.lr);
      if (order.empty()) break;
    }
  }
  return model;
}

}  // namespace cssl
