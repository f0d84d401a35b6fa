// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. Usage: acceptance [output-dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "brute_neighbors.hpp"
#include "guidance_objective.hpp"
#include "minority/harness.hpp"
#include "minority/recipes.hpp"

using namespace minority;
namespace fs = std::filesystem;

namespace tol {
constexpr double identity_rel = 1e-10;
constexpr double spearman_min = 0.5;
constexpr double se_multiple = 3.0;
constexpr double sg_second_min_ratio = 0.8;
constexpr double sg_first_max_ratio = 0.2;
constexpr double decomposition_abs = 1e-6;
constexpr double fd_rel_analytic = 1e-4;
constexpr double fd_rel_mlp = 1e-3;
constexpr double intermittent_min_ratio = 0.5;
constexpr double baseline_mean_abs = 0.05;
constexpr double baseline_var_rel = 0.05;
}  // namespace tol

namespace {

int failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("[%s] %2d %-26s %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct TimedRecipe {
  RecipeResult result;
  double seconds = 0.0;
};

TimedRecipe recipe(const std::string& name, const fs::path& root) {
  auto cfg = recipe_base(name);
  cfg.out = (root / name).string();
  const auto t0 = std::chrono::steady_clock::now();
  TimedRecipe r{run_recipe(name, cfg), 0.0};
  r.seconds = seconds_since(t0);
  return r;
}

MlpEpsModel trained_mlp() {
  ExperimentConfig cfg;
  cfg.arch.width = 64;
  cfg.train.steps = 1500;
  cfg.seed = 2024;
  return train_mlp(cfg, benchmark_spec(cfg));
}

// Realistic guidance states: perturbed data points at uniform timesteps.
struct State {
  Vec x;
  int t;
  Vec e;
};

std::vector<State> random_states(const NoiseSchedule& sched, int count, std::uint64_t seed) {
  Rng rng(seed);
  const GmmSpec spec = gmm8_ring();
  std::vector<State> out;
  for (int i = 0; i < count; ++i) {
    const int t = rng.uniform_int(1, sched.steps());
    const Vec x = perturb(spec.sample(rng), t, rng.normal_vec(2), sched);
    out.push_back({x, t, rng.normal_vec(2)});
  }
  return out;
}

GuidanceConfig raw_guidance(StopGradient sg) {
  auto cfg = recipe_base("sg-ablation").guidance;
  cfg.sg = sg;
  cfg.normalize_linf = false;
  return cfg;
}

double max_decomposition_error(const ScoreModel& model, const NoiseSchedule& sched, const std::vector<State>& states) {
  double worst = 0.0;
  for (const auto& s : states) {
    const std::vector<Vec> e{s.e};
    const Vec full = evaluate_guidance(s.x, s.t, raw_guidance(StopGradient::none), model, sched, e).direction;
    const Vec a = evaluate_guidance(s.x, s.t, raw_guidance(StopGradient::sg_first), model, sched, e).direction;
    const Vec b = evaluate_guidance(s.x, s.t, raw_guidance(StopGradient::sg_second), model, sched, e).direction;
    worst = std::max(worst, (full - a - b).cwiseAbs().maxCoeff());
  }
  return worst;
}

double max_fd_error(const ScoreModel& model, const NoiseSchedule& sched, const std::vector<State>& states) {
  double worst = 0.0;
  for (auto sg : {StopGradient::none, StopGradient::sg_first, StopGradient::sg_second}) {
    const auto cfg = raw_guidance(sg);
    for (const auto& s : states) {
      const std::vector<Vec> e{s.e};
      const Vec g = evaluate_guidance(s.x, s.t, cfg, model, sched, e).direction;
      const Vec fd = oracle::central_difference(s.x, s.t, cfg, model, sched, s.e, oracle::fd_step(sched, s.t, s.x));
      const double scale = std::max(fd.norm(), g.norm());
      worst = std::max(worst, scale > 0.0 ? (g - fd).norm() / scale : 0.0);
    }
  }
  return worst;
}

bool csv_trees_identical(const fs::path& a, const fs::path& b, std::size_t& compared) {
  bool same = true;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
    const fs::path other = b / fs::relative(entry.path(), a);
    ++compared;
    if (!fs::exists(other) || read_file(entry.path()) != read_file(other)) {
      std::printf("       differs: %s\n", fs::relative(entry.path(), a).string().c_str());
      same = false;
    }
  }
  return same && compared > 0;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::remove_all(root);
  const NoiseSchedule sched = experiment_schedule(recipe_base("sg-ablation"));
  std::map<std::string, TimedRecipe> recipes;
  for (const auto& name : recipe_names()) recipes.emplace(name, recipe(name, root));

  {
    const auto& r = recipes.at("prop1");
    const auto& v = r.result.verifications.at(0);
    report(1, "prop1-identity",
           v.cases.size() == 100 && v.max_rel_err <= tol::identity_rel && v.max_unit_rel_err <= tol::identity_rel,
           fmt("cases=%zu pointwise=%.2e unit-closed-form=%.2e (tol %.0e; all-t worst %.2e) %.1fs", v.cases.size(),
               v.max_rel_err, v.max_unit_rel_err, tol::identity_rel, v.max_unit_rel_err_grid, r.seconds));
  }
  {
    const auto& r = recipes.at("prop1");
    const auto& v = r.result.verifications.at(1);
    report(2, "corollary1-identity",
           v.cases.size() == 100 && v.max_rel_err <= tol::identity_rel && v.max_unit_rel_err <= tol::identity_rel,
           fmt("cases=%zu pointwise=%.2e unit-closed-form=%.2e (tol %.0e; all-t worst %.2e)", v.cases.size(),
               v.max_rel_err, v.max_unit_rel_err, tol::identity_rel, v.max_unit_rel_err_grid));
  }
  {
    const auto& r = recipes.at("metric-validity");
    const double rho = r.result.summary["spearman"];
    const std::size_t n = r.result.summary["latents"];
    report(3, "metric-validity", n == 2000 && rho >= tol::spearman_min && r.seconds < 60.0,
           fmt("spearman=%.4f (min %.2f) latents=%zu t=%d s=%d %.1fs", rho, tol::spearman_min, n,
               r.result.summary["metric_t"].get<int>(), r.result.summary["perturbation_step"].get<int>(), r.seconds));
  }
  {
    const auto& r = recipes.at("table3a-analog");
    std::string detail;
    for (const auto& run : r.result.runs) {
      detail += fmt("%s: logp=%.4f+-%.4f knn=%.5f+-%.5f; ", run.name.c_str(), mean(run.report.log_density),
                    std_error(run.report.log_density), mean(run.report.avg_knn), std_error(run.report.avg_knn));
    }
    const bool dens = r.result.summary["density_strictly_decreasing_3se"];
    const bool knn = r.result.summary["avg_knn_strictly_increasing_3se"];
    report(4, "guidance-effect", dens && knn && r.result.runs.size() == 3 && r.seconds < 300.0,
           detail + fmt("%.1fs", r.seconds));
  }
  {
    const auto& r = recipes.at("sg-ablation");
    const auto& shift = r.result.summary["shift"];
    const double full = shift["none"], first = shift["sg_first"], second = shift["sg_second"];
    const bool signs = full < 0.0 && first < 0.0 && second < 0.0;
    const bool ratios = second / full >= tol::sg_second_min_ratio && first / full <= tol::sg_first_max_ratio;
    report(5, "stop-gradient-ablation", signs && ratios && r.seconds < 300.0,
           fmt("shift none=%.4f sg_first=%.4f sg_second=%.4f; sg_second/full=%.3f (min %.1f) sg_first/full=%.3f "
               "(max %.1f); all shifts negative=%s %.1fs",
               full, first, second, second / full, tol::sg_second_min_ratio, first / full, tol::sg_first_max_ratio,
               signs ? "yes" : "no", r.seconds));
  }

  const GmmScoreModel analytic(gmm8_ring());
  const MlpEpsModel mlp = trained_mlp();
  {
    const auto states = random_states(sched, 100, 61);
    const double ea = max_decomposition_error(analytic, sched, states);
    const double em = max_decomposition_error(mlp, sched, states);
    report(6, "sg-decomposition", ea <= tol::decomposition_abs && em <= tol::decomposition_abs,
           fmt("max-abs analytic=%.2e mlp=%.2e (tol %.0e) over 100 states", ea, em, tol::decomposition_abs));
  }
  {
    const auto states = random_states(sched, 50, 71);
    const double ea = max_fd_error(analytic, sched, states);
    const double em = max_fd_error(mlp, sched, states);
    report(7, "gradient-finite-difference", ea <= tol::fd_rel_analytic && em <= tol::fd_rel_mlp,
           fmt("max rel analytic=%.2e (tol %.0e) mlp=%.2e (tol %.0e) over 50 states x 3 settings", ea,
               tol::fd_rel_analytic, em, tol::fd_rel_mlp));
  }
  {
    const auto& s = recipes.at("intermittent").result.summary;
    const double s1 = s["shift"]["n1"], s5 = s["shift"]["n5"];
    const std::size_t e1 = s["evaluations"]["n1"], e5 = s["evaluations"]["n5"];
    const bool counts = e1 == 250 && e5 == 50 && s["calls_match_formula"]["n1"].get<bool>() &&
                        s["calls_match_formula"]["n5"].get<bool>();
    const bool shift = std::signbit(s1) == std::signbit(s5) && s1 != 0.0 &&
                       std::abs(s5) >= tol::intermittent_min_ratio * std::abs(s1);
    report(8, "intermittent-accounting", counts && shift,
           fmt("evaluations n1=%zu n5=%zu counts-ok=%s; shift n1=%.4f n5=%.4f ratio=%.3f (min %.1f)", e1, e5,
               counts ? "yes" : "no", s1, s5, s5 / s1, tol::intermittent_min_ratio));
  }
  {
    const auto t0 = std::chrono::steady_clock::now();
    const GmmScoreModel unit(unit_gaussian(2));
    const auto xs = ancestral_sample(unit, sched, 2, 10000, 2024, resolve_threads(0));
    Vec mu = Vec::Zero(2);
    for (const auto& x : xs) mu += x;
    mu /= static_cast<double>(xs.size());
    Vec var = Vec::Zero(2);
    for (const auto& x : xs) var += (x - mu).cwiseAbs2();
    var /= static_cast<double>(xs.size() - 1);
    const bool pass = mu.cwiseAbs().maxCoeff() <= tol::baseline_mean_abs &&
                      (var.array() - 1.0).abs().maxCoeff() <= tol::baseline_var_rel;
    report(9, "ancestral-baseline", pass,
           fmt("T=%d chains=10000 mean=(%.4f, %.4f) var=(%.4f, %.4f) %.1fs", sched.steps(), mu[0], mu[1], var[0],
               var[1], seconds_since(t0)));
  }
  {
    Rng rng(2024);
    int mismatches = 0, with_dups = 0, infinite = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const int n = rng.uniform_int(2, 64);
      const int k = rng.uniform_int(1, n - 1);
      std::vector<Vec> ref;
      bool dup = false;
      for (int i = 0; i < n; ++i) {
        if (i > 0 && rng.uniform() < 0.25) {
          ref.push_back(ref[static_cast<std::size_t>(rng.uniform_int(0, i - 1))]);
          dup = true;
        } else {
          ref.push_back(rng.normal_vec(2));
        }
      }
      with_dups += dup;
      const NeighborIndex idx(ref, k);
      const auto self = static_cast<std::size_t>(rng.uniform_int(0, n - 1));
      const Vec q = rng.normal_vec(2);
      const double l = idx.lof(ref[self], self);
      infinite += std::isinf(l);
      mismatches += idx.avg_knn(ref[self], self) != brute::avg_knn(ref[self], ref, k, self);
      mismatches += idx.avg_knn(q) != brute::avg_knn(q, ref, k, std::nullopt);
      mismatches += l != brute::lof(ref[self], ref, k, self);
      mismatches += idx.lof(q) != brute::lof(q, ref, k, std::nullopt);
    }
    report(10, "knn-lof-oracles", mismatches == 0,
           fmt("200 instances (N<=64, %d with duplicates, %d infinite LOF), mismatches=%d", with_dups, infinite,
               mismatches));
  }
  {
    const auto& s = recipes.at("naive-contrast").result.summary;
    const std::size_t prop = s["below_threshold"]["proposed"], naive = s["below_threshold"]["naive"];
    const double gap = s["mean_log_density_gap"], se = s["match_tolerance_se"];
    report(11, "naive-contrast", naive > prop && std::abs(gap) <= se,
           fmt("below-threshold proposed=%zu naive=%zu of 4000; matched naive w=%.4f density gap=%.2e (tol %.2e) "
               "%.1fs",
               prop, naive, s["matched_naive_w"].get<double>(), gap, se, recipes.at("naive-contrast").seconds));
  }
  {
    const auto t0 = std::chrono::steady_clock::now();
    bool same = true;
    std::size_t compared = 0;
    for (const auto& name : recipe_names()) {
      const fs::path first = root / name;
      auto cfg = load_resolved_config(first / "resolved-config.txt");
      cfg.out = (root / "rerun" / name).string();
      run_recipe(name, cfg);
      same = csv_trees_identical(first, cfg.out, compared) && same;
    }
    report(12, "determinism", same,
           fmt("%zu per-sample CSV files re-run from resolved configs, all byte-identical=%s %.1fs", compared,
               same ? "yes" : "no", seconds_since(t0)));
  }

  std::printf("%d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
