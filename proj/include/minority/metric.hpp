#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "minority/distance.hpp"
#include "minority/errors.hpp"
#include "minority/rng.hpp"
#include "minority/schedule.hpp"
#include "minority/score_model.hpp"

namespace minority {

/// Smallest alpha_cum at which the posterior mean is still evaluated.
inline constexpr double kMinAlphaCum = 1e-12;

/// Monte-Carlo estimate of a minority metric with the draws that produced it.
struct MetricEval {
  double value = 0.0;
  int timestep = 0;
  int mc_samples = 0;
  std::vector<double> draws;

  double std_error() const {
    if (draws.size() < 2) return 0.0;
    double ss = 0.0;
    for (double v : draws) ss += (v - value) * (v - value);
    return std::sqrt(ss / static_cast<double>(draws.size() - 1) / static_cast<double>(draws.size()));
  }
};

/// Posterior mean (x_t + (1 - alpha) * score) / sqrt(alpha) for a given score.
inline Vec tweedie_from_score(const Vec& x_t, double alpha_cum, const Vec& score) {
  if (!(alpha_cum >= kMinAlphaCum)) throw NumericError("alpha_cum too small for the posterior mean");
  return (x_t + (1.0 - alpha_cum) * score) / std::sqrt(alpha_cum);
}

/// E[x_0 | x_t] under the model's score.
inline Vec tweedie(const Vec& x_t, int t, const ScoreModel& model, const NoiseSchedule& sched) {
  const double a = sched.alpha_cum(t);
  if (!(a >= kMinAlphaCum)) throw NumericError("alpha_cum too small for the posterior mean");
  return tweedie_from_score(x_t, a, model.score(x_t, t, sched));
}

/// Mean reconstruction discrepancy d(x0, tweedie(perturb(x0, t, eps), t)) over
/// the supplied noise draws.
inline MetricEval minority_score(const Vec& x0, int t, const ScoreModel& model, const NoiseSchedule& sched,
                                 const DistanceSpec& d, std::span<const Vec> noises) {
  if (noises.empty()) throw DomainError("minority score needs at least one noise draw");
  MetricEval out;
  out.timestep = t;
  out.mc_samples = static_cast<int>(noises.size());
  out.draws.reserve(noises.size());
  double sum = 0.0;
  for (const Vec& e : noises) {
    const Vec recon = tweedie(perturb(x0, t, e, sched), t, model, sched);
    const double v = d(x0, recon);
    out.draws.push_back(v);
    sum += v;
  }
  out.value = sum / static_cast<double>(noises.size());
  return out;
}

inline std::vector<Vec> draw_noise(Rng& rng, Eigen::Index dim, int count) {
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(rng.normal_vec(dim));
  return out;
}

inline MetricEval minority_score(const Vec& x0, int t, const ScoreModel& model, const NoiseSchedule& sched,
                                 const DistanceSpec& d, int mc_samples, Rng& rng) {
  if (mc_samples < 1) throw DomainError("minority score needs at least one Monte-Carlo sample");
  const auto noises = draw_noise(rng, x0.size(), mc_samples);
  return minority_score(x0, t, model, sched, d, noises);
}

/// Minority score of the posterior mean of x_t, perturbed at timestep s.
/// `fixed_noise` pins the draws; otherwise `mc_samples` draws come from `rng`.
inline MetricEval inference_metric(const Vec& x_t, int t, int s, const ScoreModel& model, const NoiseSchedule& sched,
                                   const DistanceSpec& d, const std::optional<std::vector<Vec>>& fixed_noise, Rng& rng,
                                   int mc_samples = 1) {
  sched.check_timestep(s);
  const Vec x0_hat = tweedie(x_t, t, model, sched);
  if (fixed_noise) return minority_score(x0_hat, s, model, sched, d, *fixed_noise);
  return minority_score(x0_hat, s, model, sched, d, mc_samples, rng);
}

}  // namespace minority
