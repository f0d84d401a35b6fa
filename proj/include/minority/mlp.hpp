#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Core>

#include "minority/errors.hpp"
#include "minority/rng.hpp"
#include "minority/schedule.hpp"
#include "minority/score_model.hpp"

namespace minority {

using Mat = Eigen::MatrixXd;

struct MlpArchitecture {
  Eigen::Index dim = 2;
  int width = 128;
  int hidden_layers = 2;
  int embed_dim = 16;

  /// Sizes of every activation from input (data + embedding) to output.
  std::vector<int> layer_sizes() const {
    std::vector<int> sizes{static_cast<int>(dim) + embed_dim};
    for (int i = 0; i < hidden_layers; ++i) sizes.push_back(width);
    sizes.push_back(static_cast<int>(dim));
    return sizes;
  }
};

struct TrainOptions {
  std::size_t steps = 4000;
  std::size_t batch = 128;
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

namespace detail {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double silu(double z) { return z * sigmoid(z); }

inline double silu_grad(double z) {
  const double s = sigmoid(z);
  return s * (1.0 + z * (1.0 - s));
}

}  // namespace detail

/// Sinusoidal embedding of the base-schedule timestep, rescaled to a
/// 1000-step clock so networks trained on one base length share a time axis.
inline Vec timestep_embedding(int t, const NoiseSchedule& sched, int embed_dim) {
  const double tau = sched.source_step(t) * (1000.0 / sched.base_steps());
  const int half = embed_dim / 2;
  Vec e = Vec::Zero(embed_dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[i] = std::sin(tau * freq);
    e[half + i] = std::cos(tau * freq);
  }
  return e;
}

/// Fully connected noise predictor with SiLU activations.
///
/// Input is the latent concatenated with the timestep embedding. Parameters
/// are stored per layer; `parameters()` flattens them layer by layer as
/// column-major weight followed by bias.
class MlpEpsModel final : public ScoreModel {
 public:
  struct Layer {
    Mat weight;
    Vec bias;
  };

  /// Pre-activations of every layer for one batch, kept for the backward pass.
  struct Tape {
    std::vector<Mat> inputs;
    std::vector<Mat> pre;
  };

  MlpEpsModel(MlpArchitecture arch, Rng& rng) : arch_(arch) {
    validate_arch();
    const auto sizes = arch_.layer_sizes();
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
      Layer layer{Mat(sizes[l + 1], sizes[l]), Vec(sizes[l + 1])};
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = bound * (2.0 * rng.uniform() - 1.0);
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = bound * (2.0 * rng.uniform() - 1.0);
      layers_.push_back(std::move(layer));
    }
  }

  MlpEpsModel(MlpArchitecture arch, const Vec& params) : arch_(arch) {
    validate_arch();
    const auto sizes = arch_.layer_sizes();
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      layers_.push_back(Layer{Mat::Zero(sizes[l + 1], sizes[l]), Vec::Zero(sizes[l + 1])});
    }
    set_parameters(params);
  }

  const MlpArchitecture& architecture() const noexcept { return arch_; }
  Eigen::Index dim() const override { return arch_.dim; }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  Vec parameters() const {
    Vec p(parameter_count());
    Eigen::Index off = 0;
    for (const auto& l : layers_) {
      p.segment(off, l.weight.size()) = l.weight.reshaped();
      off += l.weight.size();
      p.segment(off, l.bias.size()) = l.bias;
      off += l.bias.size();
    }
    return p;
  }

  void set_parameters(const Vec& p) {
    if (p.size() != parameter_count()) throw DomainError("parameter vector has the wrong length");
    Eigen::Index off = 0;
    for (auto& l : layers_) {
      l.weight.reshaped() = p.segment(off, l.weight.size());
      off += l.weight.size();
      l.bias = p.segment(off, l.bias.size());
      off += l.bias.size();
    }
  }

  std::size_t steps_trained() const noexcept { return steps_trained_; }
  const std::vector<double>& loss_history() const noexcept { return loss_history_; }
  std::uint64_t training_seed() const noexcept { return training_seed_; }

  void record_training(std::size_t steps, std::vector<double> losses, std::uint64_t seed) {
    steps_trained_ += steps;
    loss_history_.insert(loss_history_.end(), losses.begin(), losses.end());
    training_seed_ = seed;
  }

  /// Network input columns [x; embedding(t)] for a batch.
  Mat features(const Mat& x, const std::vector<int>& timesteps, const NoiseSchedule& sched) const {
    Mat in(x.rows() + arch_.embed_dim, x.cols());
    in.topRows(x.rows()) = x;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      in.col(j).tail(arch_.embed_dim) = timestep_embedding(timesteps[j], sched, arch_.embed_dim);
    }
    return in;
  }

  Mat forward(const Mat& input, Tape* tape = nullptr) const {
    Mat h = input;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Mat z = layers_[l].weight * h;
      z.colwise() += layers_[l].bias;
      if (tape) {
        tape->inputs.push_back(h);
        tape->pre.push_back(z);
      }
      if (l + 1 < layers_.size()) {
        h = z.unaryExpr([](double v) { return detail::silu(v); });
      } else {
        h = std::move(z);
      }
    }
    return h;
  }

  /// Reverse pass from `grad_out` (output cotangents per column). Writes the
  /// flattened parameter gradient when `param_grad` is given and returns the
  /// cotangent of the network input.
  Mat backward(const Tape& tape, const Mat& grad_out, Vec* param_grad = nullptr) const {
    std::vector<Mat> grad_w(layers_.size());
    std::vector<Vec> grad_b(layers_.size());
    Mat g = grad_out;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (l + 1 < layers_.size()) {
        g = g.cwiseProduct(tape.pre[l].unaryExpr([](double v) { return detail::silu_grad(v); }));
      }
      if (param_grad) {
        grad_w[l] = g * tape.inputs[l].transpose();
        grad_b[l] = g.rowwise().sum();
      }
      g = layers_[l].weight.transpose() * g;
    }
    if (param_grad) {
      param_grad->resize(parameter_count());
      Eigen::Index off = 0;
      for (std::size_t l = 0; l < layers_.size(); ++l) {
        param_grad->segment(off, grad_w[l].size()) = grad_w[l].reshaped();
        off += grad_w[l].size();
        param_grad->segment(off, grad_b[l].size()) = grad_b[l];
        off += grad_b[l].size();
      }
    }
    return g;
  }

  Vec eps(const Vec& x, int t, const NoiseSchedule& sched) const override {
    check_dims(x, t, sched);
    return forward(features(x, {t}, sched)).col(0);
  }

  Vec input_vjp(const Vec& x, int t, const NoiseSchedule& sched, const Vec& cotangent) const override {
    check_dims(x, t, sched);
    if (cotangent.size() != x.size()) throw DomainError("cotangent dimension does not match model");
    Tape tape;
    forward(features(x, {t}, sched), &tape);
    const Mat g = backward(tape, cotangent);
    return g.col(0).head(arch_.dim);
  }

 private:
  void validate_arch() const {
    if (arch_.dim < 1 || arch_.width < 1 || arch_.hidden_layers < 0 || arch_.embed_dim < 2 || arch_.embed_dim % 2) {
      throw ConfigError("invalid network architecture");
    }
  }

  MlpArchitecture arch_;
  std::vector<Layer> layers_;
  std::size_t steps_trained_ = 0;
  std::vector<double> loss_history_;
  std::uint64_t training_seed_ = 0;
};

/// Adam on the denoising objective E_t E_{x0, eps} ||eps - eps_theta(sqrt(a_t) x0 + sqrt(1 - a_t) eps, t)||^2
/// with t uniform over the schedule. Returns the per-step mean batch loss.
inline std::vector<double> train_dsm(MlpEpsModel& model, const std::vector<Vec>& data, const NoiseSchedule& sched,
                                     const TrainOptions& opts, Rng& rng) {
  if (data.empty()) throw DomainError("training data is empty");
  if (opts.batch == 0 || !(opts.learning_rate > 0.0)) throw ConfigError("training needs batch > 0 and lr > 0");
  const Eigen::Index d = model.dim();
  for (const auto& x : data) {
    if (x.size() != d) throw DomainError("training point dimension does not match model");
  }
  const std::uint64_t stream_key = rng.key();
  const auto B = static_cast<Eigen::Index>(opts.batch);
  const int n = static_cast<int>(data.size());
  Vec params = model.parameters();
  Vec m = Vec::Zero(params.size());
  Vec v = Vec::Zero(params.size());
  std::vector<double> history;
  history.reserve(opts.steps);

  Mat x(d, B), noise(d, B);
  std::vector<int> ts(opts.batch);
  Vec grad;
  for (std::size_t step = 0; step < opts.steps; ++step) {
    for (Eigen::Index j = 0; j < B; ++j) {
      const Vec& x0 = data[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
      const int t = rng.uniform_int(1, sched.steps());
      const Vec e = rng.normal_vec(d);
      const double a = sched.alpha_cum(t);
      x.col(j) = std::sqrt(a) * x0 + std::sqrt(1.0 - a) * e;
      noise.col(j) = e;
      ts[j] = t;
    }
    MlpEpsModel::Tape tape;
    const Mat pred = model.forward(model.features(x, ts, sched), &tape);
    const Mat resid = pred - noise;
    const double loss = resid.squaredNorm() / static_cast<double>(B);
    if (!std::isfinite(loss)) throw TrainingDivergence(step, loss);
    history.push_back(loss);
    model.backward(tape, (2.0 / static_cast<double>(B)) * resid, &grad);

    const double k = static_cast<double>(step + 1);
    m = opts.beta1 * m + (1.0 - opts.beta1) * grad;
    v = opts.beta2 * v + (1.0 - opts.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(opts.beta1, k);
    const double c2 = 1.0 - std::pow(opts.beta2, k);
    params.array() -= opts.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + opts.adam_eps);
    model.set_parameters(params);
  }
  model.record_training(opts.steps, history, stream_key);
  return history;
}

}  // namespace minority
