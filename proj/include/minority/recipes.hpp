#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "minority/config.hpp"
#include "minority/elbo.hpp"
#include "minority/harness.hpp"

namespace minority {

// ---------------------------------------------------------------------------
// ELBO identity checks

enum class VerifyMode { prop1, corollary1 };

inline std::string_view to_string(VerifyMode m) { return m == VerifyMode::prop1 ? "prop1" : "corollary1"; }

inline VerifyMode parse_verify_mode(std::string_view s) {
  if (s == "prop1") return VerifyMode::prop1;
  if (s == "corollary1") return VerifyMode::corollary1;
  throw ConfigError("unknown verify mode '" + std::string(s) + "'");
}

struct VerifyCase {
  int t = 0;
  Vec x0;
  double lhs = 0.0;
  double rhs = 0.0;
  double rel_err = 0.0;
  /// Unit-Gaussian data at the same t: closed form and both sides by exact quadrature.
  double unit_closed_form = 0.0;
  double unit_lhs = 0.0;
  double unit_rhs = 0.0;
  double unit_rel_err = 0.0;
};

struct VerifyReport {
  VerifyMode mode = VerifyMode::prop1;
  std::vector<VerifyCase> cases;
  double max_rel_err = 0.0;
  double max_unit_rel_err = 0.0;
  /// Worst closed-form error over every t of every case.
  double max_unit_rel_err_grid = 0.0;
  /// Summed over every t for the first case, shared-noise Monte Carlo.
  ElboReport totals;
  /// The same sums with independent noise on the two sides.
  ElboReport totals_independent;

  std::string csv() const {
    std::ostringstream os;
    os << "case,t";
    const Eigen::Index dim = cases.empty() ? 0 : cases.front().x0.size();
    for (Eigen::Index d = 0; d < dim; ++d) os << ",x0_" << d;
    os << ",lhs,rhs,rel_err,unit_closed_form,unit_lhs,unit_rhs,unit_rel_err\n";
    for (std::size_t i = 0; i < cases.size(); ++i) {
      const auto& c = cases[i];
      os << i << ',' << c.t;
      for (Eigen::Index d = 0; d < dim; ++d) {
        os << ',';
        detail::write_number(os, c.x0[d]);
      }
      for (double v : {c.lhs, c.rhs, c.rel_err, c.unit_closed_form, c.unit_lhs, c.unit_rhs, c.unit_rel_err}) {
        os << ',';
        detail::write_number(os, v);
      }
      os << '\n';
    }
    return os.str();
  }

  nlohmann::json summary_json() const {
    auto totals_json = [](const ElboReport& r) {
      return nlohmann::json{{"lhs", r.lhs}, {"rhs", r.rhs}, {"gap", r.gap()},
                            {"lhs_se", r.lhs_se}, {"rhs_se", r.rhs_se}, {"gap_se", r.gap_se}};
    };
    return {{"mode", std::string(to_string(mode))},
            {"cases", cases.size()},
            {"max_pointwise_rel_err", max_rel_err},
            {"max_unit_gaussian_rel_err", max_unit_rel_err},
            {"max_unit_gaussian_rel_err_all_t", max_unit_rel_err_grid},
            {"totals_shared_noise", totals_json(totals)},
            {"totals_independent_noise", totals_json(totals_independent)}};
  }
};

inline double relative_gap(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale > 0.0 ? std::abs(a - b) / scale : 0.0;
}

/// Checks the weighted-minority-score / noise-matching identity on random
/// (x0, t, eps) triples of the benchmark. In corollary1 mode x0 is replaced by
/// the posterior mean of a random noisy latent.
inline VerifyReport run_verification(const ExperimentConfig& cfg, VerifyMode mode) {
  validate(cfg);
  const GmmSpec spec = benchmark_spec(cfg);
  const NoiseSchedule sched = experiment_schedule(cfg);
  const auto model = make_model(cfg, spec, sched);
  const GmmScoreModel unit(unit_gaussian(spec.dim()));
  const auto D = static_cast<double>(spec.dim());

  VerifyReport report;
  report.mode = mode;
  ElboCheckOptions quad;
  quad.mode = ExpectationMode::quadrature;
  quad.quadrature_nodes = 4;
  for (int i = 0; i < cfg.recipe.cases; ++i) {
    Rng rng = Rng(cfg.seed).split(streams::verify).split(static_cast<std::uint64_t>(i));
    VerifyCase c;
    Vec x0 = spec.sample(rng);
    Vec x0_unit = rng.normal_vec(spec.dim());
    if (mode == VerifyMode::corollary1) {
      const int tp = rng.uniform_int(1, sched.steps());
      x0 = tweedie(perturb(x0, tp, rng.normal_vec(spec.dim()), sched), tp, *model, sched);
      x0_unit = tweedie(perturb(x0_unit, tp, rng.normal_vec(spec.dim()), sched), tp, unit, sched);
    }
    c.t = rng.uniform_int(1, sched.steps());
    c.x0 = x0;
    const auto p = elbo_pointwise(x0, c.t, rng.normal_vec(spec.dim()), *model, sched);
    c.lhs = p.lhs;
    c.rhs = p.rhs;
    c.rel_err = relative_gap(p.lhs, p.rhs);

    // Closed form of either side for N(0, I) data: a^2 D + a (1 - a) ||x0||^2,
    // against exact quadrature at the sampled t and over the whole grid.
    const ElboReport q = verify_prop1(x0_unit, unit, sched, quad, rng);
    for (const auto& term : q.terms) {
      const double a = sched.alpha_cum(term.t);
      const double cf = a * a * D + a * (1.0 - a) * x0_unit.squaredNorm();
      const double err = std::max(relative_gap(term.lhs, cf), relative_gap(term.rhs, cf));
      if (term.t == c.t) {
        c.unit_closed_form = cf;
        c.unit_lhs = term.lhs;
        c.unit_rhs = term.rhs;
        c.unit_rel_err = err;
      }
      report.max_unit_rel_err_grid = std::max(report.max_unit_rel_err_grid, err);
    }
    report.max_rel_err = std::max(report.max_rel_err, c.rel_err);
    report.max_unit_rel_err = std::max(report.max_unit_rel_err, c.unit_rel_err);
    report.cases.push_back(std::move(c));
  }
  if (!report.cases.empty()) {
    ElboCheckOptions mc;
    mc.mc_samples = 16;
    Rng rng = Rng(cfg.seed).split(streams::verify).split(~0ULL);
    report.totals = verify_prop1(report.cases.front().x0, *model, sched, mc, rng);
    mc.shared_noise = false;
    report.totals_independent = verify_prop1(report.cases.front().x0, *model, sched, mc, rng);
  }
  return report;
}

inline void write_verification(const VerifyReport& report, const ExperimentConfig& cfg,
                               const std::filesystem::path& dir) {
  nlohmann::json j = report.summary_json();
  j["schema"] = kSummarySchema;
  j["fingerprint"] = hex64(config_fingerprint(cfg));
  j["seed"] = cfg.seed;
  write_file_atomic(dir / "verify.csv", report.csv());
  write_file_atomic(dir / "summary.json", j.dump(2) + "\n");
  write_file_atomic(dir / "resolved-config.txt", "# fingerprint=" + hex64(config_fingerprint(cfg)) +
                                                     " seed=" + std::to_string(cfg.seed) + "\n" + serialize_config(cfg));
}

// ---------------------------------------------------------------------------
// Named recipes

inline const std::vector<std::string>& recipe_names() {
  static const std::vector<std::string> names{"table3a-analog", "sg-ablation",     "intermittent",
                                              "naive-contrast", "metric-validity", "prop1"};
  return names;
}

/// Starting configuration of a recipe; callers may layer overrides on top.
inline ExperimentConfig recipe_base(const std::string& name) {
  if (std::find(recipe_names().begin(), recipe_names().end(), name) == recipe_names().end()) {
    throw ConfigError("unknown recipe '" + name + "'");
  }
  ExperimentConfig cfg;
  cfg.benchmark = "gmm8-ring";
  cfg.schedule_kind = ScheduleKind::cosine;
  cfg.base_steps = 1000;
  cfg.steps = 250;
  cfg.guidance.schedule = WeightSchedule::variance;
  cfg.guidance.s_fraction = 0.2;
  cfg.guidance.n = 5;
  cfg.guidance.w = 6.0;
  cfg.chains = 4000;
  cfg.seed = 2024;
  cfg.out = "out/" + name;
  if (name == "metric-validity") {
    cfg.guidance.w = 0.0;
    cfg.chains = 2000;
  }
  return cfg;
}

struct RecipeRun {
  std::string name;
  RunReport report;
};

struct RecipeResult {
  std::string recipe;
  nlohmann::json summary;
  std::deque<RecipeRun> runs;
  std::vector<VerifyReport> verifications;

  const RunReport& run(const std::string& name) const {
    for (const auto& r : runs) {
      if (r.name == name) return r.report;
    }
    throw DomainError("recipe has no run named '" + name + "'");
  }
};

namespace detail {

inline nlohmann::json run_brief(const RunReport& r) {
  nlohmann::json j{{"guidance.w", r.config.guidance.w},
                   {"mean_log_density", mean(r.log_density)},
                   {"log_density_se", std_error(r.log_density)},
                   {"below_threshold", r.below_count()},
                   {"guidance_evaluations_per_chain", r.guidance_evaluations}};
  if (r.evaluated) {
    j["mean_avg_knn"] = mean(r.avg_knn);
    j["avg_knn_se"] = std_error(r.avg_knn);
  }
  return j;
}

inline std::string format_tag(double v) { return format_double(v); }

}  // namespace detail

/// Runs the named recipe starting from `cfg` (normally recipe_base(name) plus
/// overrides). Each variant is a full run in cfg.out/<variant>; the recipe
/// summary goes to cfg.out/summary.json.
inline RecipeResult run_recipe(const std::string& name, const ExperimentConfig& cfg) {
  recipe_base(name);
  validate(cfg);
  const std::filesystem::path root = cfg.out;
  RecipeResult result;
  result.recipe = name;
  nlohmann::json& s = result.summary;
  s["schema"] = kSummarySchema;
  s["recipe"] = name;
  s["fingerprint"] = hex64(config_fingerprint(cfg));
  s["seed"] = cfg.seed;

  auto run_variant = [&](const std::string& variant, ExperimentConfig v) -> const RunReport& {
    v.out = (root / variant).string();
    result.runs.push_back({variant, run_experiment(v)});
    s["runs"][variant] = detail::run_brief(result.runs.back().report);
    return result.runs.back().report;
  };

  if (name == "table3a-analog") {
    std::vector<std::string> order;
    for (double w : cfg.recipe.w_values) {
      ExperimentConfig v = cfg;
      v.guidance.w = w;
      order.push_back("w" + detail::format_tag(w));
      run_variant(order.back(), v);
    }
    bool dens = true, knn = true;
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      const auto& a = result.runs[i].report;
      const auto& b = result.runs[i + 1].report;
      const double se_ld = std::hypot(std_error(a.log_density), std_error(b.log_density));
      const double se_kn = std::hypot(std_error(a.avg_knn), std_error(b.avg_knn));
      dens = dens && mean(a.log_density) - mean(b.log_density) > 3.0 * se_ld;
      knn = knn && mean(b.avg_knn) - mean(a.avg_knn) > 3.0 * se_kn;
    }
    s["density_strictly_decreasing_3se"] = dens;
    s["avg_knn_strictly_increasing_3se"] = knn;
  } else if (name == "sg-ablation") {
    ExperimentConfig base = cfg;
    base.guidance.w = 0.0;
    const double ld0 = mean(run_variant("baseline", base).log_density);
    for (auto sg : {StopGradient::none, StopGradient::sg_first, StopGradient::sg_second}) {
      ExperimentConfig v = cfg;
      v.guidance.sg = sg;
      const std::string tag(to_string(sg));
      s["shift"][tag] = mean(run_variant(tag, v).log_density) - ld0;
    }
    const double full = s["shift"]["none"];
    s["sg_second_over_full"] = s["shift"]["sg_second"].get<double>() / full;
    s["sg_first_over_full"] = s["shift"]["sg_first"].get<double>() / full;
  } else if (name == "intermittent") {
    ExperimentConfig base = cfg;
    base.guidance.w = 0.0;
    const double ld0 = mean(run_variant("baseline", base).log_density);
    for (int n : cfg.recipe.n_values) {
      ExperimentConfig v = cfg;
      v.guidance.n = n;
      const std::string tag = "n" + std::to_string(n);
      const RunReport& r = run_variant(tag, v);
      s["shift"][tag] = mean(r.log_density) - ld0;
      s["evaluations"][tag] = r.guidance_evaluations;
      s["expected_evaluations"][tag] = guided_step_count(cfg.steps, n);
      s["calls_match_formula"][tag] = r.summary_json()["model_calls"]["matches_formula"];
    }
  } else if (name == "naive-contrast") {
    const RunReport& prop = run_variant("proposed", cfg);
    const double target = mean(prop.log_density);
    // Bisect the naive scale until its mean clean log-density matches.
    ExperimentConfig naive = cfg;
    naive.guidance.kind = GuidanceKind::naive_density;
    RunOptions quick{false, false};
    auto naive_mean = [&](double w) {
      ExperimentConfig v = naive;
      v.guidance.w = w;
      return mean(run_experiment(v, quick).log_density);
    };
    double lo = 0.0, hi = std::max(cfg.guidance.w, 1e-3);
    for (int i = 0; i < 20 && naive_mean(hi) > target; ++i) {
      lo = hi;
      hi *= 2.0;
    }
    for (int i = 0; i < cfg.recipe.match_iterations; ++i) {
      const double mid = 0.5 * (lo + hi);
      (naive_mean(mid) > target ? lo : hi) = mid;
    }
    naive.guidance.w = 0.5 * (lo + hi);
    const RunReport& nv = run_variant("naive", naive);
    s["matched_naive_w"] = naive.guidance.w;
    s["mean_log_density_gap"] = mean(nv.log_density) - target;
    s["match_tolerance_se"] = std_error(prop.log_density);
    s["below_threshold"] = {{"proposed", prop.below_count()}, {"naive", nv.below_count()}};
    s["threshold"] = prop.threshold;
  } else if (name == "metric-validity") {
    const RunReport& r = run_variant("unguided", cfg);
    std::vector<double> neg(r.x0hat_log_density.size());
    std::transform(r.x0hat_log_density.begin(), r.x0hat_log_density.end(), neg.begin(), [](double v) { return -v; });
    s["spearman"] = spearman(r.metric, neg);
    s["metric_t"] = r.metric_t;
    s["perturbation_step"] = r.perturbation_step;
    s["latents"] = r.metric.size();
  } else if (name == "prop1") {
    for (auto mode : {VerifyMode::prop1, VerifyMode::corollary1}) {
      result.verifications.push_back(run_verification(cfg, mode));
      write_verification(result.verifications.back(), cfg, root / std::string(to_string(mode)));
      s["checks"][std::string(to_string(mode))] = result.verifications.back().summary_json();
    }
  }

  write_file_atomic(root / "summary.json", s.dump(2) + "\n");
  write_file_atomic(root / "resolved-config.txt", "# recipe=" + name + " fingerprint=" + hex64(config_fingerprint(cfg)) +
                                                      " seed=" + std::to_string(cfg.seed) + "\n" +
                                                      serialize_config(cfg));
  return result;
}

}  // namespace minority
