#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "minority/distance.hpp"
#include "minority/errors.hpp"
#include "minority/metric.hpp"
#include "minority/rng.hpp"
#include "minority/schedule.hpp"
#include "minority/score_model.hpp"

namespace minority {

enum class WeightSchedule { fixed, switch_off, variance };
enum class StopGradient { none, sg_first, sg_second };
enum class GuidanceKind { self, naive_density };

inline std::string_view to_string(WeightSchedule v) {
  switch (v) {
    case WeightSchedule::fixed: return "fixed";
    case WeightSchedule::switch_off: return "switch_off";
    case WeightSchedule::variance: return "variance";
  }
  return "?";
}

inline std::string_view to_string(StopGradient v) {
  switch (v) {
    case StopGradient::none: return "none";
    case StopGradient::sg_first: return "sg_first";
    case StopGradient::sg_second: return "sg_second";
  }
  return "?";
}

inline std::string_view to_string(GuidanceKind v) { return v == GuidanceKind::self ? "self" : "naive_density"; }

inline WeightSchedule parse_weight_schedule(std::string_view s) {
  if (s == "fixed") return WeightSchedule::fixed;
  if (s == "switch_off") return WeightSchedule::switch_off;
  if (s == "variance") return WeightSchedule::variance;
  throw ConfigError("unknown weight schedule '" + std::string(s) + "'");
}

inline StopGradient parse_stop_gradient(std::string_view s) {
  if (s == "none") return StopGradient::none;
  if (s == "sg_first") return StopGradient::sg_first;
  if (s == "sg_second") return StopGradient::sg_second;
  throw ConfigError("unknown stop-gradient mode '" + std::string(s) + "'");
}

inline GuidanceKind parse_guidance_kind(std::string_view s) {
  if (s == "self") return GuidanceKind::self;
  if (s == "naive_density") return GuidanceKind::naive_density;
  throw ConfigError("unknown guidance kind '" + std::string(s) + "'");
}

struct GuidanceConfig {
  double w = 0.2;
  WeightSchedule schedule = WeightSchedule::variance;
  int t_mid = 1;
  /// Guidance is applied at timesteps divisible by n.
  int n = 5;
  /// Perturbation timestep of the metric as a fraction of T.
  double s_fraction = 0.8;
  StopGradient sg = StopGradient::sg_second;
  DistanceSpec distance;
  bool normalize_linf = true;
  int mc_samples = 1;
  GuidanceKind kind = GuidanceKind::self;

  void validate(const NoiseSchedule& sched) const {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("guidance scale w must be finite and non-negative");
    if (n < 1) throw ConfigError("intermittent rate n must be >= 1");
    if (!(s_fraction > 0.0 && s_fraction < 1.0)) throw ConfigError("s_fraction must lie in (0, 1)");
    if (mc_samples < 1) throw ConfigError("guidance needs at least one Monte-Carlo sample");
    if (schedule == WeightSchedule::switch_off && !sched.contains(t_mid)) {
      throw ConfigError("t_mid must lie in [1, T] for the switch-off schedule");
    }
  }

  int perturbation_step(const NoiseSchedule& sched) const { return sched.timestep_at_fraction(s_fraction); }
};

/// Guidance scale w_t at timestep t.
inline double weight(int t, const GuidanceConfig& cfg, const NoiseSchedule& sched) {
  sched.check_timestep(t);
  switch (cfg.schedule) {
    case WeightSchedule::fixed: return cfg.w;
    case WeightSchedule::switch_off: return t >= cfg.t_mid ? cfg.w : 0.0;
    case WeightSchedule::variance: return cfg.w * sched.reverse_var(t);
  }
  return 0.0;
}

/// One guidance evaluation: the (optionally normalized) direction plus the
/// quantities worth tracing.
struct GuidanceEval {
  Vec direction;
  double raw_l2 = 0.0;
  double raw_linf = 0.0;
  /// Metric value at x_t; NaN for the naive baseline.
  double metric = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline void finish_direction(GuidanceEval& out, Vec raw, bool normalize) {
  out.raw_l2 = raw.norm();
  out.raw_linf = raw.size() ? raw.cwiseAbs().maxCoeff() : 0.0;
  if (normalize && out.raw_linf > 0.0) raw /= out.raw_linf;
  out.direction = std::move(raw);
}

}  // namespace detail

/// Gradient with respect to x_t of d(x0_hat(x_t), x0_hathat(x_s_hat(x_t))),
/// averaged over the given noise draws for x_s_hat.
///
/// sg_second holds x0_hathat constant (one pullback at t), sg_first holds the
/// first argument of d constant and keeps only the path through x0_hathat,
/// none keeps both. With normalization off, none = sg_first + sg_second.
inline GuidanceEval evaluate_guidance(const Vec& x_t, int t, const GuidanceConfig& cfg, const ScoreModel& model,
                                      const NoiseSchedule& sched, std::span<const Vec> noises) {
  if (noises.empty()) throw DomainError("guidance needs at least one noise draw");
  const int s = cfg.perturbation_step(sched);
  const double a_t = sched.alpha_cum(t);
  const double a_s = sched.alpha_cum(s);
  if (!(a_t >= kMinAlphaCum) || !(a_s >= kMinAlphaCum)) {
    throw NumericError("alpha_cum too small for the posterior mean");
  }
  const double c_t = std::sqrt(1.0 - a_t);
  const double c_s = std::sqrt(1.0 - a_s);
  const double inv_m = 1.0 / static_cast<double>(noises.size());

  const Vec x0_hat = tweedie(x_t, t, model, sched);
  Vec cot = Vec::Zero(x_t.size());
  double metric = 0.0;
  for (const Vec& e : noises) {
    const Vec xs = std::sqrt(a_s) * x0_hat + c_s * e;
    const Vec x0_hathat = tweedie(xs, s, model, sched);
    metric += cfg.distance(x0_hat, x0_hathat) * inv_m;
    auto [g_first, g_second] = cfg.distance.gradients(x0_hat, x0_hathat);
    if (cfg.sg != StopGradient::sg_first) cot += inv_m * g_first;
    if (cfg.sg != StopGradient::sg_second) {
      // d x0_hathat / d x0_hat = I - c_s * d eps(x_s) / d x_s
      cot += inv_m * (g_second - c_s * model.input_vjp(xs, s, sched, g_second));
    }
  }
  // d x0_hat / d x_t = (I - c_t * d eps(x_t) / d x_t) / sqrt(a_t)
  Vec raw = (cot - c_t * model.input_vjp(x_t, t, sched, cot)) / std::sqrt(a_t);

  GuidanceEval out;
  out.metric = metric;
  detail::finish_direction(out, std::move(raw), cfg.normalize_linf);
  return out;
}

/// Descent direction on the perturbed log-density, -score(x_t, t).
inline GuidanceEval evaluate_naive_guidance(const Vec& x_t, int t, const ScoreModel& model, const NoiseSchedule& sched,
                                            bool normalize_linf) {
  GuidanceEval out;
  detail::finish_direction(out, -model.score(x_t, t, sched), normalize_linf);
  return out;
}

inline Vec naive_density_guidance(const Vec& x_t, int t, const ScoreModel& model, const NoiseSchedule& sched,
                                  bool normalize_linf = true) {
  return evaluate_naive_guidance(x_t, t, model, sched, normalize_linf).direction;
}

/// Guidance direction at x_t with fresh metric noise from `rng`.
inline Vec guidance(const Vec& x_t, int t, const GuidanceConfig& cfg, const ScoreModel& model,
                    const NoiseSchedule& sched, Rng& rng) {
  if (cfg.kind == GuidanceKind::naive_density) {
    return naive_density_guidance(x_t, t, model, sched, cfg.normalize_linf);
  }
  const auto noises = draw_noise(rng, x_t.size(), cfg.mc_samples);
  return evaluate_guidance(x_t, t, cfg, model, sched, noises).direction;
}

}  // namespace minority
