#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "minority/errors.hpp"
#include "minority/metric.hpp"
#include "minority/rng.hpp"
#include "minority/schedule.hpp"
#include "minority/score_model.hpp"

namespace minority {

/// Nodes and weights of Gauss-Hermite quadrature for the standard normal
/// measure (Golub-Welsch on the probabilists' Hermite recurrence). The rule
/// integrates polynomials of degree <= 2n - 1 exactly.
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;

  explicit GaussHermite(int n) {
    if (n < 1) throw DomainError("quadrature needs at least one node");
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) {
      jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(static_cast<double>(i));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
    for (int i = 0; i < n; ++i) {
      nodes.push_back(es.eigenvalues()[i]);
      const double v = es.eigenvectors()(0, i);
      weights.push_back(v * v);
    }
  }
};

enum class ExpectationMode { monte_carlo, quadrature };

struct ElboCheckOptions {
  ExpectationMode mode = ExpectationMode::monte_carlo;
  int mc_samples = 16;
  /// Use the same noise draw for both sides of every term. Otherwise each side
  /// gets its own draws and the gap is a genuine Monte-Carlo difference.
  bool shared_noise = true;
  /// Nodes per dimension for ExpectationMode::quadrature (tensor-product rule).
  int quadrature_nodes = 8;
};

/// One timestep of the weighted-minority-score / noise-matching comparison.
struct ElboTerm {
  int t = 0;
  double weight = 0.0;  // alpha_cum / (1 - alpha_cum)
  double lhs = 0.0;     // weight * E d_sq(x0, x0_hat(x_t))
  double rhs = 0.0;     // E ||eps - eps_theta(x_t, t)||^2
  double lhs_var = 0.0; // variance of the estimate (0 for quadrature)
  double rhs_var = 0.0;
  double gap_var = 0.0;
  double gap() const { return lhs - rhs; }
};

struct ElboReport {
  std::vector<ElboTerm> terms;
  double lhs = 0.0;
  double rhs = 0.0;
  double lhs_se = 0.0;
  double rhs_se = 0.0;
  double gap_se = 0.0;
  /// Largest |lhs - rhs| / max(|lhs|, |rhs|) over single shared-noise draws.
  double max_pointwise_rel_err = 0.0;
  double gap() const { return lhs - rhs; }
};

/// Both sides of the identity for a single (x0, t, eps):
/// (alpha/(1-alpha)) * ||x0 - x0_hat(x_t)||^2 and ||eps - eps_theta(x_t, t)||^2.
struct PointwiseElbo {
  double lhs = 0.0;
  double rhs = 0.0;
};

inline PointwiseElbo elbo_pointwise(const Vec& x0, int t, const Vec& eps, const ScoreModel& model,
                                    const NoiseSchedule& sched) {
  const double a = sched.alpha_cum(t);
  const Vec x_t = perturb(x0, t, eps, sched);
  const Vec e_hat = model.eps(x_t, t, sched);
  const Vec recon = tweedie_from_score(x_t, a, -e_hat / std::sqrt(1.0 - a));
  return {a / (1.0 - a) * (x0 - recon).squaredNorm(), (eps - e_hat).squaredNorm()};
}

namespace detail {

/// Calls fn(eps, weight) over a tensor-product Gauss-Hermite grid in `dim` dimensions.
template <typename Fn>
void for_each_quadrature_point(const GaussHermite& gh, Eigen::Index dim, Fn&& fn) {
  if (dim > 4) throw DomainError("tensor-product quadrature is limited to 4 dimensions");
  const auto n = static_cast<Eigen::Index>(gh.nodes.size());
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(dim), 0);
  Vec e(dim);
  while (true) {
    double w = 1.0;
    for (Eigen::Index d = 0; d < dim; ++d) {
      e[d] = gh.nodes[static_cast<std::size_t>(idx[d])];
      w *= gh.weights[static_cast<std::size_t>(idx[d])];
    }
    fn(e, w);
    Eigen::Index d = 0;
    while (d < dim && ++idx[d] == n) idx[d++] = 0;
    if (d == dim) break;
  }
}

}  // namespace detail

/// Compares sum_t w_t * L(x0; t) (squared-error minority score weighted by
/// alpha_cum / (1 - alpha_cum)) against the noise-matching sum
/// sum_t E ||eps - eps_theta(x_t, t)||^2 over every timestep of `sched`.
inline ElboReport verify_prop1(const Vec& x0, const ScoreModel& model, const NoiseSchedule& sched,
                               const ElboCheckOptions& opts, Rng& rng) {
  if (x0.size() != model.dim()) throw DomainError("point dimension does not match model");
  ElboReport report;
  const GaussHermite gh(opts.mode == ExpectationMode::quadrature ? opts.quadrature_nodes : 1);
  for (int t = 1; t <= sched.steps(); ++t) {
    const double a = sched.alpha_cum(t);
    ElboTerm term;
    term.t = t;
    term.weight = a / (1.0 - a);
    if (opts.mode == ExpectationMode::quadrature) {
      detail::for_each_quadrature_point(gh, x0.size(), [&](const Vec& e, double w) {
        const auto p = elbo_pointwise(x0, t, e, model, sched);
        term.lhs += w * p.lhs;
        term.rhs += w * p.rhs;
        const double scale = std::max(std::abs(p.lhs), std::abs(p.rhs));
        if (scale > 0.0) {
          report.max_pointwise_rel_err = std::max(report.max_pointwise_rel_err, std::abs(p.lhs - p.rhs) / scale);
        }
      });
    } else {
      if (opts.mc_samples < 1) throw DomainError("Monte-Carlo check needs at least one sample");
      const int m = opts.mc_samples;
      std::vector<double> ls, rs, gs;
      for (int j = 0; j < m; ++j) {
        const Vec e1 = rng.normal_vec(x0.size());
        const auto p = elbo_pointwise(x0, t, e1, model, sched);
        double r = p.rhs;
        if (opts.shared_noise) {
          const double scale = std::max(std::abs(p.lhs), std::abs(p.rhs));
          if (scale > 0.0) {
            report.max_pointwise_rel_err = std::max(report.max_pointwise_rel_err, std::abs(p.lhs - p.rhs) / scale);
          }
        } else {
          r = elbo_pointwise(x0, t, rng.normal_vec(x0.size()), model, sched).rhs;
        }
        ls.push_back(p.lhs);
        rs.push_back(r);
        gs.push_back(p.lhs - r);
      }
      auto mean_var = [m](const std::vector<double>& v, double& mu, double& var_of_mean) {
        mu = 0.0;
        for (double x : v) mu += x;
        mu /= m;
        double ss = 0.0;
        for (double x : v) ss += (x - mu) * (x - mu);
        var_of_mean = m > 1 ? ss / (m - 1) / m : 0.0;
      };
      double gap_mean = 0.0;
      mean_var(ls, term.lhs, term.lhs_var);
      mean_var(rs, term.rhs, term.rhs_var);
      mean_var(gs, gap_mean, term.gap_var);
    }
    report.lhs += term.lhs;
    report.rhs += term.rhs;
    report.lhs_se += term.lhs_var;
    report.rhs_se += term.rhs_var;
    report.gap_se += term.gap_var;
    report.terms.push_back(term);
  }
  report.lhs_se = std::sqrt(report.lhs_se);
  report.rhs_se = std::sqrt(report.rhs_se);
  report.gap_se = std::sqrt(report.gap_se);
  return report;
}

/// The same comparison for the posterior mean of a noisy latent x_t.
inline ElboReport verify_corollary1(const Vec& x_t, int t, const ScoreModel& model, const NoiseSchedule& sched,
                                    const ElboCheckOptions& opts, Rng& rng) {
  return verify_prop1(tweedie(x_t, t, model, sched), model, sched, opts, rng);
}

}  // namespace minority
