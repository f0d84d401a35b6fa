#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "minority/errors.hpp"
#include "minority/rng.hpp"
#include "minority/schedule.hpp"

namespace minority {

/// Mixture of isotropic Gaussians: sum_k weight_k * N(mean_k, variance_k * I).
struct GmmSpec {
  std::vector<double> weights;
  std::vector<Vec> means;
  std::vector<double> variances;

  int components() const noexcept { return static_cast<int>(weights.size()); }
  Eigen::Index dim() const noexcept { return means.empty() ? 0 : means.front().size(); }

  void validate() const {
    if (weights.empty()) throw ConfigError("mixture needs at least one component");
    if (means.size() != weights.size() || variances.size() != weights.size()) {
      throw ConfigError("mixture weights, means and variances must have equal counts");
    }
    double sum = 0.0;
    for (double w : weights) {
      if (!(w > 0.0)) throw ConfigError("mixture weights must be positive");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("mixture weights must sum to 1");
    for (double v : variances) {
      if (!(v > 0.0)) throw ConfigError("mixture variances must be positive");
    }
    for (const auto& m : means) {
      if (m.size() != dim() || m.size() == 0) throw ConfigError("mixture means must share a nonzero dimension");
    }
  }

  Vec sample(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    int k = components() - 1;
    for (int i = 0; i < components(); ++i) {
      acc += weights[i];
      if (u < acc) {
        k = i;
        break;
      }
    }
    return means[k] + std::sqrt(variances[k]) * rng.normal_vec(dim());
  }

  std::vector<Vec> sample(Rng& rng, std::size_t n) const {
    std::vector<Vec> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample(rng));
    return out;
  }
};

/// Eight components on a circle of radius 2 with decreasing weights, so the
/// last few components are minorities.
inline GmmSpec gmm8_ring() {
  GmmSpec spec;
  spec.weights = {0.28, 0.22, 0.16, 0.12, 0.09, 0.07, 0.04, 0.02};
  for (int k = 0; k < 8; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / 8.0;
    Vec m(2);
    m << 2.0 * std::cos(angle), 2.0 * std::sin(angle);
    spec.means.push_back(m);
    spec.variances.push_back(0.04);
  }
  return spec;
}

/// Two well-separated components with weights 0.95 / 0.05.
inline GmmSpec gmm2_imbalanced() {
  GmmSpec spec;
  spec.weights = {0.95, 0.05};
  Vec a(2), b(2);
  a << -1.5, 0.0;
  b << 1.5, 0.0;
  spec.means = {a, b};
  spec.variances = {0.1, 0.1};
  return spec;
}

/// Standard normal in `dim` dimensions as a one-component mixture.
inline GmmSpec unit_gaussian(Eigen::Index dim) {
  return GmmSpec{{1.0}, {Vec::Zero(dim)}, {1.0}};
}

inline GmmSpec benchmark_by_name(std::string_view name) {
  if (name == "gmm8-ring") return gmm8_ring();
  if (name == "gmm2-imbalanced") return gmm2_imbalanced();
  if (name == "unit-gaussian") return unit_gaussian(2);
  throw ConfigError("unknown benchmark '" + std::string(name) + "'");
}

namespace detail {

/// Per-component quantities of the mixture after forward perturbation to
/// signal level `alpha` (alpha = 1 recovers the clean mixture).
struct MixtureEval {
  double log_density = 0.0;
  std::vector<double> resp;       // posterior responsibilities
  std::vector<Vec> comp_score;    // -(x - sqrt(alpha) mu_k) / v_k
  std::vector<double> comp_var;   // alpha sigma_k^2 + 1 - alpha
};

inline MixtureEval evaluate_mixture(const GmmSpec& spec, const Vec& x, double alpha, bool with_scores) {
  if (x.size() != spec.dim()) throw DomainError("point dimension does not match mixture");
  const int K = spec.components();
  const double scale = std::sqrt(alpha);
  const double d = static_cast<double>(x.size());
  MixtureEval out;
  out.resp.resize(K);
  out.comp_var.resize(K);
  if (with_scores) out.comp_score.resize(K);
  double max_log = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < K; ++k) {
    const double v = alpha * spec.variances[k] + (1.0 - alpha);
    const Vec diff = x - scale * spec.means[k];
    const double lp = std::log(spec.weights[k]) - 0.5 * d * std::log(2.0 * std::numbers::pi * v) -
                      0.5 * diff.squaredNorm() / v;
    out.comp_var[k] = v;
    out.resp[k] = lp;
    if (with_scores) out.comp_score[k] = -diff / v;
    max_log = std::max(max_log, lp);
  }
  double sum = 0.0;
  for (int k = 0; k < K; ++k) sum += std::exp(out.resp[k] - max_log);
  out.log_density = max_log + std::log(sum);
  for (int k = 0; k < K; ++k) out.resp[k] = std::exp(out.resp[k] - out.log_density);
  return out;
}

}  // namespace detail

/// Exact log-density of the mixture at signal level `alpha`.
inline double mixture_log_density(const GmmSpec& spec, const Vec& x, double alpha = 1.0) {
  return detail::evaluate_mixture(spec, x, alpha, false).log_density;
}

/// Gradient of the log-density at signal level `alpha`.
inline Vec mixture_score(const GmmSpec& spec, const Vec& x, double alpha = 1.0) {
  const auto ev = detail::evaluate_mixture(spec, x, alpha, true);
  Vec s = Vec::Zero(x.size());
  for (int k = 0; k < spec.components(); ++k) s += ev.resp[k] * ev.comp_score[k];
  return s;
}

/// Hessian of the log-density times `u` (the Hessian is symmetric, so this is
/// also u^T H).
inline Vec mixture_hessian_product(const GmmSpec& spec, const Vec& x, double alpha, const Vec& u) {
  const auto ev = detail::evaluate_mixture(spec, x, alpha, true);
  Vec s = Vec::Zero(x.size());
  Vec hu = Vec::Zero(x.size());
  for (int k = 0; k < spec.components(); ++k) {
    const Vec& g = ev.comp_score[k];
    s += ev.resp[k] * g;
    hu += ev.resp[k] * (g * g.dot(u) - u / ev.comp_var[k]);
  }
  hu -= s * s.dot(u);
  return hu;
}

/// log q(x) of the clean mixture, or of its forward perturbation to timestep t.
inline double log_density_gmm(const Vec& x, const GmmSpec& spec, std::optional<int> t = std::nullopt,
                              const NoiseSchedule* sched = nullptr) {
  if (!t) return mixture_log_density(spec, x, 1.0);
  if (sched == nullptr) throw DomainError("perturbed density requires a schedule");
  return mixture_log_density(spec, x, sched->alpha_cum(*t));
}

/// Exact score of the perturbed mixture at timestep t.
inline Vec gmm_score(const GmmSpec& spec, const Vec& x, int t, const NoiseSchedule& sched) {
  return mixture_score(spec, x, sched.alpha_cum(t));
}

}  // namespace minority
