#pragma once

// Experiment driver. One run writes into its output directory:
//
//   samples.csv          # minority-samples/1 fingerprint=<hex> seed=<n>
//                        chain,x0,...,x{D-1}
//   metrics.csv          # minority-metrics/1 fingerprint=<hex> seed=<n>
//                        chain,log_density,below_threshold,x0hat_log_density,metric,avg_knn,lof
//   summary.json         schema "minority-summary/1"
//   resolved-config.txt  every key, loadable with --config
//   trace.csv            only with trace = true
//
// Every random quantity derives from the config seed through named streams,
// so per-sample CSVs are reproducible byte for byte from resolved-config.txt.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "minority/checkpoint.hpp"
#include "minority/config.hpp"
#include "minority/gmm.hpp"
#include "minority/metric.hpp"
#include "minority/mlp.hpp"
#include "minority/neighbors.hpp"
#include "minority/sampler.hpp"
#include "minority/score_model.hpp"
#include "minority/stats.hpp"

namespace minority {

inline constexpr const char* kSamplesSchema = "minority-samples/1";
inline constexpr const char* kMetricsSchema = "minority-metrics/1";
inline constexpr const char* kSummarySchema = "minority-summary/1";

/// Stream ids split off the root seed. Chain streams use ids 0..chains-1.
namespace streams {
inline constexpr std::uint64_t reference = 0x7265660000000001ULL;
inline constexpr std::uint64_t threshold = 0x7468720000000002ULL;
inline constexpr std::uint64_t metric = 0x6d65740000000003ULL;
inline constexpr std::uint64_t train_data = 0x6461740000000004ULL;
inline constexpr std::uint64_t train = 0x74726e0000000005ULL;
inline constexpr std::uint64_t init = 0x696e690000000006ULL;
inline constexpr std::uint64_t verify = 0x7665720000000007ULL;
}  // namespace streams

inline unsigned resolve_threads(unsigned requested) {
  return requested ? requested : std::max(1u, std::thread::hardware_concurrency());
}

/// Writes `content` to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.close();
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Base schedule the MLP is trained on; sampling uses its respaced version.
inline NoiseSchedule training_schedule(const ExperimentConfig& cfg) {
  return build_schedule(cfg.schedule_kind, cfg.base_steps, cfg.schedule_params);
}

/// Trains an MLP on fresh benchmark draws. Deterministic in cfg.seed.
inline MlpEpsModel train_mlp(const ExperimentConfig& cfg, const GmmSpec& spec) {
  MlpArchitecture arch = cfg.arch;
  arch.dim = spec.dim();
  Rng init = Rng(cfg.seed).split(streams::init);
  MlpEpsModel model(arch, init);
  Rng data_rng = Rng(cfg.seed).split(streams::train_data);
  const auto data = spec.sample(data_rng, cfg.train_data);
  Rng rng = Rng(cfg.seed).split(streams::train);
  train_dsm(model, data, training_schedule(cfg), cfg.train, rng);
  return model;
}

/// The analytic mixture model, a loaded checkpoint, or an MLP trained in-run.
inline std::unique_ptr<ScoreModel> make_model(const ExperimentConfig& cfg, const GmmSpec& spec,
                                              const NoiseSchedule& sched) {
  if (cfg.model == "analytic") return std::make_unique<GmmScoreModel>(spec);
  if (cfg.model != "mlp") throw ConfigError("model must be analytic or mlp");
  if (cfg.checkpoint.empty()) return std::make_unique<MlpEpsModel>(train_mlp(cfg, spec));
  if (!std::filesystem::exists(cfg.checkpoint)) throw IoError("checkpoint '" + cfg.checkpoint + "' does not exist");
  auto model = std::make_unique<MlpEpsModel>(load_checkpoint(cfg.checkpoint, sched));
  if (model->dim() != spec.dim()) throw ConfigError("checkpoint dimension does not match the benchmark");
  return model;
}

struct RunOptions {
  /// Compute the inference metric, AvgkNN and LOF and write metrics.csv.
  bool evaluate = true;
  bool write = true;
};

struct RunReport {
  ExperimentConfig config;
  std::uint64_t fingerprint = 0;
  bool evaluated = false;

  std::vector<Vec> samples;
  std::vector<double> log_density;
  std::vector<char> below_threshold;
  std::vector<double> x0hat_log_density;
  std::vector<double> metric;
  std::vector<double> avg_knn;
  std::vector<double> lof;

  double threshold = 0.0;
  int metric_t = 0;
  int perturbation_step = 0;
  std::string reference;
  std::size_t guidance_evaluations = 0;
  std::uint64_t forwards = 0;
  std::uint64_t backwards = 0;
  CallCounts expected_per_chain;
  double wall_seconds = 0.0;

  std::size_t below_count() const {
    return static_cast<std::size_t>(std::count(below_threshold.begin(), below_threshold.end(), 1));
  }
  double mean_log_density() const { return mean(log_density); }

  std::string header(const char* schema) const {
    return std::string("# ") + schema + " fingerprint=" + hex64(fingerprint) + " seed=" + std::to_string(config.seed) +
           "\n";
  }

  std::string samples_csv() const {
    std::ostringstream os;
    os << header(kSamplesSchema) << "chain";
    const Eigen::Index dim = samples.empty() ? 0 : samples.front().size();
    for (Eigen::Index d = 0; d < dim; ++d) os << ",x" << d;
    os << '\n';
    for (std::size_t c = 0; c < samples.size(); ++c) {
      os << c;
      for (Eigen::Index d = 0; d < dim; ++d) {
        os << ',';
        detail::write_number(os, samples[c][d]);
      }
      os << '\n';
    }
    return os.str();
  }

  std::string metrics_csv() const {
    std::ostringstream os;
    os << header(kMetricsSchema) << "chain,log_density,below_threshold,x0hat_log_density,metric,avg_knn,lof\n";
    for (std::size_t c = 0; c < samples.size(); ++c) {
      os << c << ',';
      detail::write_number(os, log_density[c]);
      os << ',' << static_cast<int>(below_threshold[c]) << ',';
      detail::write_number(os, x0hat_log_density[c]);
      os << ',';
      detail::write_number(os, metric[c]);
      os << ',';
      detail::write_number(os, avg_knn[c]);
      os << ',';
      detail::write_number(os, lof[c]);
      os << '\n';
    }
    return os.str();
  }

  nlohmann::json summary_json() const {
    using nlohmann::json;
    json j;
    j["schema"] = kSummarySchema;
    j["fingerprint"] = hex64(fingerprint);
    j["seed"] = config.seed;
    json cfg = json::object();
    for (const auto& k : config_keys()) cfg[k.key] = k.get(config);
    j["config"] = cfg;
    j["chains"] = samples.size();
    j["steps"] = config.steps;
    j["wall_clock_seconds"] = wall_seconds;
    j["guidance"] = {{"kind", std::string(to_string(config.guidance.kind))},
                     {"evaluations_per_chain", guidance_evaluations},
                     {"perturbation_step", perturbation_step}};
    const auto chains = static_cast<std::uint64_t>(samples.size());
    j["model_calls"] = {{"forwards", forwards},
                        {"backwards", backwards},
                        {"expected_forwards", expected_per_chain.forwards * chains},
                        {"expected_backwards", expected_per_chain.backwards * chains},
                        {"matches_formula", forwards == expected_per_chain.forwards * chains &&
                                                backwards == expected_per_chain.backwards * chains}};
    j["log_density"] = describe(log_density);
    j["off_support"] = {{"threshold", threshold},
                        {"quantile", config.eval.threshold_quantile},
                        {"count", below_count()},
                        {"fraction", static_cast<double>(below_count()) / static_cast<double>(samples.size())}};
    if (evaluated) {
      j["metric"] = describe(metric);
      j["metric"]["timestep"] = metric_t;
      j["metric"]["perturbation_step"] = perturbation_step;
      j["x0hat_log_density"] = describe(x0hat_log_density);
      j["avg_knn"] = describe(avg_knn);
      j["avg_knn"]["k"] = config.eval.k_knn;
      j["lof"] = describe(lof);
      j["lof"]["k"] = config.eval.k_lof;
      j["reference"] = reference;
      if (samples.size() >= 3) {
        try {
          std::vector<double> neg(x0hat_log_density.size());
          std::transform(x0hat_log_density.begin(), x0hat_log_density.end(), neg.begin(), [](double v) { return -v; });
          j["metric_vs_neg_log_density_spearman"] = spearman(metric, neg);
        } catch (const NumericError&) {
          j["metric_vs_neg_log_density_spearman"] = nullptr;
        }
      }
    }
    return j;
  }

  /// Mean, standard error and quantiles over the finite values; `infinite`
  /// counts the rest.
  static nlohmann::json describe(const std::vector<double>& v) {
    std::vector<double> finite;
    for (double x : v) {
      if (std::isfinite(x)) finite.push_back(x);
    }
    nlohmann::json j;
    j["count"] = v.size();
    j["infinite"] = v.size() - finite.size();
    if (finite.empty()) return j;
    j["mean"] = mean(finite);
    j["std_error"] = std_error(finite);
    j["min"] = *std::min_element(finite.begin(), finite.end());
    j["max"] = *std::max_element(finite.begin(), finite.end());
    for (double q : {0.001, 0.01, 0.1, 0.5, 0.9, 0.99}) {
      j["quantiles"][detail::format_double(q)] = quantile(finite, q);
    }
    return j;
  }
};

/// Threshold below which a clean log-density counts as off-support.
inline double off_support_threshold(const ExperimentConfig& cfg, const GmmSpec& spec) {
  Rng rng = Rng(cfg.seed).split(streams::threshold);
  std::vector<double> ld;
  ld.reserve(cfg.eval.threshold_samples);
  for (std::size_t i = 0; i < cfg.eval.threshold_samples; ++i) ld.push_back(mixture_log_density(spec, spec.sample(rng)));
  return quantile(ld, cfg.eval.threshold_quantile);
}

inline void write_report(const RunReport& report, const std::filesystem::path& dir) {
  write_file_atomic(dir / "samples.csv", report.samples_csv());
  if (report.evaluated) write_file_atomic(dir / "metrics.csv", report.metrics_csv());
  write_file_atomic(dir / "summary.json", report.summary_json().dump(2) + "\n");
  write_file_atomic(dir / "resolved-config.txt", "# fingerprint=" + hex64(report.fingerprint) +
                                                     " seed=" + std::to_string(report.config.seed) + "\n" +
                                                     serialize_config(report.config));
}

/// Samples with the configured guidance, evaluates the samples and writes
/// the run artifacts into cfg.out.
inline RunReport run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {}) {
  const auto start = std::chrono::steady_clock::now();
  validate(cfg);
  const GmmSpec spec = benchmark_spec(cfg);
  const NoiseSchedule sched = experiment_schedule(cfg);
  if (opts.evaluate) {
    const std::size_t available = (cfg.eval.ref_mode != ReferenceMode::generated ? cfg.eval.ref_size : 0) +
                                  (cfg.eval.ref_mode != ReferenceMode::real ? cfg.chains - 1 : 0);
    if (available < static_cast<std::size_t>(std::max(cfg.eval.k_knn, cfg.eval.k_lof))) {
      throw ConfigError("reference set (" + std::string(to_string(cfg.eval.ref_mode)) + ") has " +
                        std::to_string(available) + " neighbors per query; eval.k_knn and eval.k_lof need more");
    }
  }
  const auto model = make_model(cfg, spec, sched);
  const unsigned threads = resolve_threads(cfg.threads);

  RunReport report;
  report.config = cfg;
  report.fingerprint = config_fingerprint(cfg);
  report.evaluated = opts.evaluate;
  report.metric_t = sched.timestep_at_fraction(cfg.eval.metric_t_fraction);
  report.perturbation_step = cfg.guidance.perturbation_step(sched);

  CountingModel counter(*model);
  SampleOptions so;
  so.threads = threads;
  so.trace = cfg.trace;
  if (opts.evaluate) so.capture_t = report.metric_t;
  SampleResult result = guided_sample(counter, sched, cfg.guidance, spec.dim(), cfg.chains, cfg.seed, so);
  report.forwards = counter.forwards();
  report.backwards = counter.backwards();
  report.expected_per_chain = expected_calls_per_chain(sched, cfg.guidance);
  report.guidance_evaluations = result.guidance_evaluations;
  for (const auto& x : result.samples) {
    if (!x.allFinite()) throw NumericError("sampling produced non-finite values; lower guidance.w");
  }
  report.samples = std::move(result.samples);

  const std::size_t n = report.samples.size();
  report.threshold = off_support_threshold(cfg, spec);
  report.log_density.resize(n);
  report.below_threshold.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    report.log_density[c] = mixture_log_density(spec, report.samples[c]);
    report.below_threshold[c] = report.log_density[c] < report.threshold ? 1 : 0;
  }

  if (opts.evaluate) {
    report.metric.resize(n);
    report.x0hat_log_density.resize(n);
    detail::parallel_for(n, threads, [&](std::size_t c) {
      Rng rng = Rng(cfg.seed).split(streams::metric).split(c);
      const Vec x0_hat = tweedie(result.captured[c], report.metric_t, *model, sched);
      report.x0hat_log_density[c] = mixture_log_density(spec, x0_hat);
      report.metric[c] =
          minority_score(x0_hat, report.perturbation_step, *model, sched, cfg.guidance.distance, cfg.eval.metric_mc, rng)
              .value;
    });

    std::vector<Vec> refset;
    std::size_t offset = 0;
    if (cfg.eval.ref_mode != ReferenceMode::generated) {
      Rng rng = Rng(cfg.seed).split(streams::reference);
      refset = spec.sample(rng, cfg.eval.ref_size);
      offset = refset.size();
    }
    if (cfg.eval.ref_mode != ReferenceMode::real) refset.insert(refset.end(), report.samples.begin(), report.samples.end());
    report.reference = std::string(to_string(cfg.eval.ref_mode)) + ": " + std::to_string(offset) + " real + " +
                       std::to_string(refset.size() - offset) + " generated points";
    const bool self_in_ref = cfg.eval.ref_mode != ReferenceMode::real;
    const NeighborIndex knn(refset, cfg.eval.k_knn);
    const NeighborIndex lofi(refset, cfg.eval.k_lof);
    report.avg_knn.resize(n);
    report.lof.resize(n);
    detail::parallel_for(n, threads, [&](std::size_t c) {
      std::optional<std::size_t> self;
      if (self_in_ref) self = offset + c;
      report.avg_knn[c] = knn.avg_knn(report.samples[c], self);
      report.lof[c] = lofi.lof(report.samples[c], self);
    });
  }

  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (opts.write) {
    write_report(report, cfg.out);
    if (cfg.trace) {
      std::ostringstream os;
      write_trace_csv(os, result);
      write_file_atomic(std::filesystem::path(cfg.out) / "trace.csv", os.str());
    }
  }
  return report;
}

/// Re-creates the config stored in a resolved-config.txt.
inline ExperimentConfig load_resolved_config(const std::filesystem::path& path) {
  return parse_config(read_file(path));
}

}  // namespace minority
