#pragma once

// A small fully-connected softmax classifier with hand-written backprop,
// inverted dropout on hidden layers, SGD with (Nesterov) momentum, the
// truncated cosine learning-rate schedule, and an EMA parameter shadow.
//
// All parameters live in one flat vector. Layer l stores its weight matrix
// (out x in, row-major) followed by its bias vector.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cssl/error.hpp"
#include "cssl/prob.hpp"
#include "cssl/rng.hpp"

namespace cssl {

enum class Activation { Sigmoid, Relu };

inline std::string to_string(Activation a) { return a == Activation::Sigmoid ? "sigmoid" : "relu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "relu") return Activation::Relu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

class MlpModel {
 public:
  /// Zero-initialized model. `layer_sizes` is {input, hidden..., K}.
  MlpModel(std::vector<std::size_t> layer_sizes, Activation activation, double dropout_rate = 0.0)
      : sizes_(std::move(layer_sizes)), activation_(activation), dropout_rate_(dropout_rate) {
    if (sizes_.size() < 2) throw std::invalid_argument("MLP needs at least input and output sizes");
    for (auto s : sizes_) {
      if (s == 0) throw std::invalid_argument("MLP layer sizes must be positive");
    }
    if (sizes_.back() < 2) throw std::invalid_argument("MLP needs at least 2 output classes");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("dropout_rate must lie in [0,1)");
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      weight_offsets_.push_back(offset);
      offset += sizes_[l] * sizes_[l + 1];
      bias_offsets_.push_back(offset);
      offset += sizes_[l + 1];
    }
    params_.assign(offset, 0.0);
  }

  /// Glorot-uniform weights, zero biases.
  static MlpModel initialized(std::vector<std::size_t> layer_sizes, Activation activation, double dropout_rate,
                              Rng& rng) {
    MlpModel m(std::move(layer_sizes), activation, dropout_rate);
    for (std::size_t l = 0; l < m.n_layers(); ++l) {
      const double fan_in = static_cast<double>(m.sizes_[l]);
      const double fan_out = static_cast<double>(m.sizes_[l + 1]);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      auto w = m.weights(l);
      for (double& v : w) v = rng.uniform(-limit, limit);
    }
    return m;
  }

  const std::vector<std::size_t>& layer_sizes() const noexcept { return sizes_; }
  std::size_t n_layers() const noexcept { return sizes_.size() - 1; }
  std::size_t input_dim() const noexcept { return sizes_.front(); }
  std::size_t n_classes() const noexcept { return sizes_.back(); }
  Activation activation() const noexcept { return activation_; }
  double dropout_rate() const noexcept { return dropout_rate_; }
  void set_dropout_rate(double r) {
    if (!(r >= 0.0 && r < 1.0)) throw std::invalid_argument("dropout_rate must lie in [0,1)");
    dropout_rate_ = r;
  }

  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }
  std::size_t n_params() const noexcept { return params_.size(); }

  std::span<double> weights(std::size_t l) { return {params_.data() + weight_offsets_[l], sizes_[l] * sizes_[l + 1]}; }
  std::span<const double> weights(std::size_t l) const {
    return {params_.data() + weight_offsets_[l], sizes_[l] * sizes_[l + 1]};
  }
  std::span<double> biases(std::size_t l) { return {params_.data() + bias_offsets_[l], sizes_[l + 1]}; }
  std::span<const double> biases(std::size_t l) const { return {params_.data() + bias_offsets_[l], sizes_[l + 1]}; }

  std::size_t weight_offset(std::size_t l) const { return weight_offsets_[l]; }
  std::size_t bias_offset(std::size_t l) const { return bias_offsets_[l]; }

  bool same_shape(const MlpModel& o) const noexcept { return sizes_ == o.sizes_; }

 private:
  std::vector<std::size_t> sizes_;
  Activation activation_;
  double dropout_rate_;
  std::vector<double> params_;
  std::vector<std::size_t> weight_offsets_;
  std::vector<std::size_t> bias_offsets_;
};

/// Intermediate values of one forward pass, consumed by backward().
struct ForwardTrace {
  std::vector<std::vector<double>> inputs;  // input to each layer (post-dropout for hidden)
  std::vector<std::vector<double>> pre;     // pre-activation of each hidden layer
  std::vector<std::vector<double>> masks;   // dropout multipliers per hidden layer; empty when deterministic
  std::vector<double> probs;

  bool empty() const noexcept { return probs.empty(); }
};

namespace detail {

inline double activate(Activation a, double z) {
  return a == Activation::Sigmoid ? 1.0 / (1.0 + std::exp(-z)) : (z > 0.0 ? z : 0.0);
}

inline double activate_derivative(Activation a, double z, double out) {
  if (a == Activation::Sigmoid) return out * (1.0 - out);
  return z > 0.0 ? 1.0 : 0.0;
}

inline void affine(std::span<const double> w, std::span<const double> b, std::span<const double> in,
                   std::vector<double>& out) {
  const std::size_t n_out = b.size();
  const std::size_t n_in = in.size();
  out.assign(n_out, 0.0);
  for (std::size_t o = 0; o < n_out; ++o) {
    double s = b[o];
    const double* row = w.data() + o * n_in;
    for (std::size_t i = 0; i < n_in; ++i) s += row[i] * in[i];
    out[o] = s;
  }
}

}  // namespace detail

/// Numerically stable softmax (max-shifted).
inline std::vector<double> softmax(std::span<const double> logits) {
  double m = logits[0];
  for (double z : logits) m = std::max(m, z);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

/// Forward pass that records what backward() needs. Dropout masks are drawn
/// from `rng` only when `stochastic` is set and the model's rate is positive.
inline ForwardTrace forward_trace(const MlpModel& model, std::span<const double> x, bool stochastic, Rng* rng) {
  detail::require_same_size(x.size(), model.input_dim(), "forward");
  const bool drop = stochastic && model.dropout_rate() > 0.0;
  if (drop && rng == nullptr) throw std::invalid_argument("stochastic forward needs an rng stream");
  const double keep_scale = 1.0 / (1.0 - model.dropout_rate());

  ForwardTrace t;
  t.inputs.emplace_back(x.begin(), x.end());
  std::vector<double> z;
  for (std::size_t l = 0; l < model.n_layers(); ++l) {
    detail::affine(model.weights(l), model.biases(l), t.inputs.back(), z);
    if (l + 1 == model.n_layers()) {
      t.probs = softmax(z);
      break;
    }
    std::vector<double> a(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) a[i] = detail::activate(model.activation(), z[i]);
    if (drop) {
      std::vector<double> mask(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        mask[i] = rng->bernoulli(model.dropout_rate()) ? 0.0 : keep_scale;
        a[i] *= mask[i];
      }
      t.masks.push_back(std::move(mask));
    }
    t.pre.push_back(z);
    t.inputs.push_back(std::move(a));
  }
  return t;
}

inline ProbDist forward(const MlpModel& model, std::span<const double> x, bool stochastic, Rng& rng) {
  return ProbDist(forward_trace(model, x, stochastic, &rng).probs);
}

/// Deterministic prediction (no dropout).
inline ProbDist predict(const MlpModel& model, std::span<const double> x) {
  return ProbDist(forward_trace(model, x, false, nullptr).probs);
}

/// Accumulates scale * dL/dtheta into `grad` given dL/dp at the softmax output
/// of the traced pass. Dropout masks of that pass are reused.
inline void backward_accumulate(const MlpModel& model, const ForwardTrace& trace, std::span<const double> loss_grad,
                                std::span<double> grad, double scale = 1.0) {
  if (trace.empty() || trace.inputs.size() != model.n_layers()) {
    throw std::logic_error("backward called without a matching forward pass");
  }
  detail::require_same_size(loss_grad.size(), model.n_classes(), "backward");
  detail::require_same_size(grad.size(), model.n_params(), "backward gradient buffer");

  // Softmax Jacobian: dL/dz_k = p_k (g_k - sum_i p_i g_i).
  const auto& p = trace.probs;
  double dot = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * loss_grad[i];
  std::vector<double> delta(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) delta[k] = p[k] * (loss_grad[k] - dot);

  for (std::size_t l = model.n_layers(); l-- > 0;) {
    const auto& in = trace.inputs[l];
    const std::size_t n_in = in.size();
    const std::size_t n_out = delta.size();
    double* gw = grad.data() + model.weight_offset(l);
    double* gb = grad.data() + model.bias_offset(l);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double d = scale * delta[o];
      if (d == 0.0) continue;
      gb[o] += d;
      double* row = gw + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) row[i] += d * in[i];
    }
    if (l == 0) break;
    // Propagate to the hidden layer feeding layer l.
    const auto w = model.weights(l);
    std::vector<double> prev(n_in, 0.0);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = w.data() + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) prev[i] += row[i] * d;
    }
    const auto& z = trace.pre[l - 1];
    const bool has_mask = !trace.masks.empty();
    for (std::size_t i = 0; i < n_in; ++i) {
      const double mask = has_mask ? trace.masks[l - 1][i] : 1.0;
      if (mask == 0.0) {
        prev[i] = 0.0;
        continue;
      }
      const double out = detail::activate(model.activation(), z[i]);
      prev[i] *= mask * detail::activate_derivative(model.activation(), z[i], out);
    }
    delta = std::move(prev);
  }
}

inline std::vector<double> backward(const MlpModel& model, const ForwardTrace& trace,
                                    std::span<const double> loss_grad) {
  std::vector<double> g(model.n_params(), 0.0);
  backward_accumulate(model, trace, loss_grad, g);
  return g;
}

// ---------------------------------------------------------------------------
// Optimization

struct OptimizerState {
  std::vector<double> velocity;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 0.0;

  static OptimizerState for_model(const MlpModel& m, double momentum, bool nesterov, double weight_decay) {
    return {std::vector<double>(m.n_params(), 0.0), momentum, nesterov, weight_decay};
  }
};

/// One SGD step with coupled weight decay d = g + wd * theta:
///   v     <- momentum * v - lr * d
///   theta <- theta + momentum * v - lr * d   (Nesterov)
///   theta <- theta + v                       (classical)
/// Throws NumericError before touching anything if a gradient is non-finite.
inline void sgd_step(MlpModel& model, std::span<const double> grads, OptimizerState& opt, double lr) {
  detail::require_same_size(grads.size(), model.n_params(), "sgd_step gradients");
  detail::require_same_size(opt.velocity.size(), model.n_params(), "sgd_step velocity");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) throw NumericError("sgd_step: non-finite gradient at parameter " + std::to_string(i));
  }
  auto theta = model.params();
  const double beta = opt.momentum;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = grads[i] + opt.weight_decay * theta[i];
    opt.velocity[i] = beta * opt.velocity[i] - lr * d;
    theta[i] += opt.nesterov ? beta * opt.velocity[i] - lr * d : opt.velocity[i];
  }
}

/// eta * cos(7 pi k / (16 K)).
inline double cosine_lr(double eta, long long k, long long total_steps) {
  if (total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be positive");
  if (k < 0 || k > total_steps) throw std::invalid_argument("cosine_lr: step outside [0, total_steps]");
  return eta * std::cos(7.0 * std::numbers::pi * static_cast<double>(k) / (16.0 * static_cast<double>(total_steps)));
}

class EmaShadow {
 public:
  EmaShadow(const MlpModel& model, double decay) : shadow_(model), decay_(decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("EMA decay must lie in [0,1)");
  }

  double decay() const noexcept { return decay_; }
  const MlpModel& model() const noexcept { return shadow_; }
  std::span<const double> params() const noexcept { return shadow_.params(); }

  /// shadow <- decay * shadow + (1 - decay) * theta
  void update(const MlpModel& model) {
    if (!model.same_shape(shadow_)) throw DimensionMismatch("EMA shadow shape differs from model");
    auto s = shadow_.params();
    const auto theta = model.params();
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = decay_ * s[i] + (1.0 - decay_) * theta[i];
  }

 private:
  MlpModel shadow_;
  double decay_;
};

inline void ema_update(EmaShadow& shadow, const MlpModel& model) { shadow.update(model); }

}  // namespace cssl
