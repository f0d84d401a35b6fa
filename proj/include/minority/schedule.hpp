#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "minority/errors.hpp"
#include "minority/rng.hpp"

namespace minority {

enum class ScheduleKind { linear, cosine };

inline std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::linear ? "linear" : "cosine";
}

inline ScheduleKind parse_schedule_kind(std::string_view s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw ConfigError("unknown schedule kind '" + std::string(s) + "'");
}

struct ScheduleParams {
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double cosine_offset = 0.008;
  double max_beta = 0.999;
};

namespace detail {

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Discrete diffusion noise schedule with 1-indexed timesteps t = 1..T.
///
/// A schedule may be a uniform-stride respacing of a longer base schedule. In
/// that case `source_step(t)` maps back to the base timestep, which trained
/// networks use for their time embedding, and `base_fingerprint()` identifies
/// the schedule the network was trained on.
class NoiseSchedule {
 public:
  NoiseSchedule(ScheduleKind kind, std::vector<double> betas)
      : NoiseSchedule(kind, std::move(betas), {}, 0, 0) {}

  ScheduleKind kind() const noexcept { return kind_; }
  int steps() const noexcept { return static_cast<int>(betas_.size()); }

  double beta(int t) const { return betas_[index(t)]; }
  double alpha_cum(int t) const { return alpha_cum_[index(t)]; }
  /// Fixed reverse-process variance; equal to beta(t).
  double reverse_var(int t) const { return betas_[index(t)]; }

  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alpha_cums() const noexcept { return alpha_cum_; }

  int source_step(int t) const { return source_steps_[index(t)]; }
  int base_steps() const noexcept { return base_steps_; }

  /// Hash of (kind, T, betas) of this schedule.
  std::uint64_t fingerprint() const noexcept { return fingerprint_; }
  /// Fingerprint of the base schedule this one was respaced from (itself if not respaced).
  std::uint64_t base_fingerprint() const noexcept { return base_fingerprint_; }

  bool contains(int t) const noexcept { return t >= 1 && t <= steps(); }

  void check_timestep(int t) const {
    if (!contains(t)) {
      throw DomainError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    }
  }

  /// Nearest valid timestep to `fraction * T`.
  int timestep_at_fraction(double fraction) const {
    const long t = std::lround(fraction * steps());
    return static_cast<int>(std::clamp<long>(t, 1, steps()));
  }

  /// Uniform-stride subsequence of `count` timesteps (always keeping 1 and T),
  /// with betas recomputed so the kept cumulative products are preserved.
  NoiseSchedule respaced(int count) const {
    if (count < 1 || count > steps()) {
      throw ConfigError("respacing count " + std::to_string(count) + " outside [1, " + std::to_string(steps()) + "]");
    }
    if (count == steps()) return *this;
    std::vector<int> kept;
    kept.reserve(count);
    for (int i = 0; i < count; ++i) {
      const double pos = count == 1 ? steps() - 1 : static_cast<double>(i) * (steps() - 1) / (count - 1);
      kept.push_back(static_cast<int>(std::lround(pos)) + 1);
    }
    std::vector<double> betas;
    std::vector<int> sources;
    double prev = 1.0;
    for (int t : kept) {
      const double a = alpha_cum(t);
      betas.push_back(1.0 - a / prev);
      sources.push_back(source_step(t));
      prev = a;
    }
    return NoiseSchedule(kind_, std::move(betas), std::move(sources), base_steps_, base_fingerprint_);
  }

 private:
  NoiseSchedule(ScheduleKind kind, std::vector<double> betas, std::vector<int> sources, int base_steps,
                std::uint64_t base_fp)
      : kind_(kind), betas_(std::move(betas)) {
    if (betas_.empty()) throw ConfigError("schedule needs at least one timestep");
    alpha_cum_.resize(betas_.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < betas_.size(); ++i) {
      const double b = betas_[i];
      if (!(b > 0.0 && b < 1.0)) {
        throw ConfigError("beta[" + std::to_string(i + 1) + "] = " + std::to_string(b) + " not in (0, 1)");
      }
      prod *= 1.0 - b;
      alpha_cum_[i] = prod;
    }
    std::uint64_t h = detail::fnv1a(&kind_, sizeof(kind_));
    const std::uint64_t n = betas_.size();
    h = detail::fnv1a(&n, sizeof(n), h);
    h = detail::fnv1a(betas_.data(), betas_.size() * sizeof(double), h);
    fingerprint_ = h;
    if (sources.empty()) {
      source_steps_.resize(betas_.size());
      for (std::size_t i = 0; i < betas_.size(); ++i) source_steps_[i] = static_cast<int>(i) + 1;
      base_steps_ = steps();
      base_fingerprint_ = fingerprint_;
    } else {
      source_steps_ = std::move(sources);
      base_steps_ = base_steps;
      base_fingerprint_ = base_fp;
    }
  }

  std::size_t index(int t) const {
    check_timestep(t);
    return static_cast<std::size_t>(t - 1);
  }

  ScheduleKind kind_;
  std::vector<double> betas_;
  std::vector<double> alpha_cum_;
  std::vector<int> source_steps_;
  int base_steps_ = 0;
  std::uint64_t fingerprint_ = 0;
  std::uint64_t base_fingerprint_ = 0;
};

/// Linear betas from beta_start to beta_end, or the improved-DDPM cosine
/// schedule alpha_cum(t) = f(t)/f(0), f(t) = cos^2(((t/T + s0)/(1 + s0)) * pi/2),
/// with betas clipped to max_beta.
inline NoiseSchedule build_schedule(ScheduleKind kind, int steps, const ScheduleParams& params = {}) {
  if (steps < 1) throw ConfigError("schedule needs T >= 1");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  if (kind == ScheduleKind::linear) {
    if (!(params.beta_start > 0.0 && params.beta_start <= params.beta_end && params.beta_end < 1.0)) {
      throw ConfigError("linear schedule requires 0 < beta_start <= beta_end < 1");
    }
    for (int i = 0; i < steps; ++i) {
      const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
      betas[i] = params.beta_start + frac * (params.beta_end - params.beta_start);
    }
  } else {
    if (!(params.cosine_offset >= 0.0) || !(params.max_beta > 0.0 && params.max_beta < 1.0)) {
      throw ConfigError("cosine schedule requires cosine_offset >= 0 and max_beta in (0, 1)");
    }
    const double s0 = params.cosine_offset;
    auto f = [&](double t) {
      const double c = std::cos((t / steps + s0) / (1.0 + s0) * std::numbers::pi / 2.0);
      return c * c;
    };
    const double f0 = f(0.0);
    for (int i = 0; i < steps; ++i) {
      const double prev = f(i) / f0;
      const double cur = f(i + 1) / f0;
      betas[i] = std::min(1.0 - cur / prev, params.max_beta);
    }
  }
  return NoiseSchedule(kind, std::move(betas));
}

/// One-shot forward perturbation sqrt(alpha_cum) * x0 + sqrt(1 - alpha_cum) * eps.
inline Vec perturb(const Vec& x0, int t, const Vec& eps, const NoiseSchedule& sched) {
  sched.check_timestep(t);
  if (eps.size() != x0.size()) throw DomainError("noise and data dimensions differ");
  const double a = sched.alpha_cum(t);
  return std::sqrt(a) * x0 + std::sqrt(1.0 - a) * eps;
}

}  // namespace minority
