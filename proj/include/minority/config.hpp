#pragma once

// Flat "key = value" experiment configuration. Lines starting with '#' and
// blank lines are ignored; every key is listed by config_keys().

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "minority/errors.hpp"
#include "minority/gmm.hpp"
#include "minority/guidance.hpp"
#include "minority/mlp.hpp"
#include "minority/schedule.hpp"

namespace minority {

enum class ReferenceMode { real, generated, pooled };

inline std::string_view to_string(ReferenceMode m) {
  switch (m) {
    case ReferenceMode::real: return "real";
    case ReferenceMode::generated: return "generated";
    case ReferenceMode::pooled: return "pooled";
  }
  return "?";
}

inline ReferenceMode parse_reference_mode(std::string_view s) {
  if (s == "real") return ReferenceMode::real;
  if (s == "generated") return ReferenceMode::generated;
  if (s == "pooled") return ReferenceMode::pooled;
  throw ConfigError("unknown reference mode '" + std::string(s) + "'");
}

struct EvalOptions {
  int k_knn = 5;
  int k_lof = 20;
  ReferenceMode ref_mode = ReferenceMode::pooled;
  /// Real points drawn from the benchmark for the reference set.
  std::size_t ref_size = 4000;
  /// Timestep (as a fraction of T) at which the inference metric is recorded.
  double metric_t_fraction = 0.5;
  int metric_mc = 1;
  /// Off-support threshold: this quantile of the clean log-density of real data.
  double threshold_quantile = 0.001;
  std::size_t threshold_samples = 100000;
};

/// Parameters that only the named recipes read.
struct RecipeOptions {
  std::vector<double> w_values{0.0, 2.0, 6.0};
  std::vector<int> n_values{1, 5};
  int match_iterations = 14;
  int cases = 100;
};

struct ExperimentConfig {
  std::string benchmark = "gmm8-ring";
  /// Used when benchmark = inline.
  GmmSpec inline_gmm;

  ScheduleKind schedule_kind = ScheduleKind::cosine;
  int base_steps = 1000;
  int steps = 250;
  ScheduleParams schedule_params;

  std::string model = "analytic";
  std::string checkpoint;
  MlpArchitecture arch;
  TrainOptions train;
  std::size_t train_data = 20000;

  GuidanceConfig guidance;
  std::size_t chains = 1000;
  std::uint64_t seed = 0;
  /// 0 picks the hardware concurrency. Results do not depend on it.
  unsigned threads = 0;
  bool trace = false;
  EvalOptions eval;
  RecipeOptions recipe;
  std::string out = "out";
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  const std::string s = trim(text);
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("invalid value '" + s + "' for key '" + std::string(key) + "'");
  }
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("invalid boolean '" + s + "' for key '" + std::string(key) + "'");
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(std::string_view key, std::string_view text) {
  std::vector<T> out;
  for (const auto& item : split(text, ',')) out.push_back(parse_number<T>(key, item));
  return out;
}

/// "weight:m1,m2,...:variance; ..." for each component.
inline std::string format_gmm(const GmmSpec& spec) {
  std::string out;
  for (int k = 0; k < spec.components(); ++k) {
    if (k) out += "; ";
    out += format_double(spec.weights[k]) + ':';
    for (Eigen::Index d = 0; d < spec.means[k].size(); ++d) {
      if (d) out += ',';
      out += format_double(spec.means[k][d]);
    }
    out += ':' + format_double(spec.variances[k]);
  }
  return out;
}

inline GmmSpec parse_gmm(std::string_view key, std::string_view text) {
  GmmSpec spec;
  if (trim(text).empty()) return spec;
  for (const auto& comp : split(text, ';')) {
    const auto parts = split(comp, ':');
    if (parts.size() != 3) {
      throw ConfigError("component '" + comp + "' of '" + std::string(key) + "' is not weight:mean:variance");
    }
    spec.weights.push_back(parse_number<double>(key, parts[0]));
    const auto mean = parse_list<double>(key, parts[1]);
    spec.means.push_back(Eigen::Map<const Vec>(mean.data(), static_cast<Eigen::Index>(mean.size())));
    spec.variances.push_back(parse_number<double>(key, parts[2]));
  }
  return spec;
}

}  // namespace detail

struct ConfigKey {
  std::string key;
  std::string help;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

/// Every configuration key in serialization order.
inline const std::vector<ConfigKey>& config_keys() {
  using detail::format_double;
  using detail::parse_number;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto add = [&k](std::string key, std::string help, auto get, auto set) {
      k.push_back(ConfigKey{std::move(key), std::move(help), get, set});
    };
    auto dbl = [&add](std::string key, std::string help, auto member) {
      add(key, std::move(help), [member](const ExperimentConfig& c) { return format_double(member(c)); },
          [member, key](ExperimentConfig& c, std::string_view v) { member(c) = parse_number<double>(key, v); });
    };
    auto integer = [&add](std::string key, std::string help, auto member) {
      add(key, std::move(help), [member](const ExperimentConfig& c) { return std::to_string(member(c)); },
          [member, key](ExperimentConfig& c, std::string_view v) {
            using T = std::remove_reference_t<decltype(member(c))>;
            member(c) = parse_number<T>(key, v);
          });
    };
    auto text = [&add](std::string key, std::string help, auto member) {
      add(key, std::move(help), [member](const ExperimentConfig& c) { return member(c); },
          [member](ExperimentConfig& c, std::string_view v) { member(c) = detail::trim(v); });
    };

    text("benchmark", "gmm8-ring | gmm2-imbalanced | unit-gaussian | inline",
         [](auto& c) -> auto& { return c.benchmark; });
    add("gmm.components", "inline mixture as 'weight:mean1,mean2,...:variance; ...'",
        [](const ExperimentConfig& c) { return detail::format_gmm(c.inline_gmm); },
        [](ExperimentConfig& c, std::string_view v) { c.inline_gmm = detail::parse_gmm("gmm.components", v); });
    add("schedule.kind", "linear | cosine", [](const ExperimentConfig& c) { return std::string(to_string(c.schedule_kind)); },
        [](ExperimentConfig& c, std::string_view v) { c.schedule_kind = parse_schedule_kind(detail::trim(v)); });
    integer("schedule.base_steps", "timesteps of the base schedule", [](auto& c) -> auto& { return c.base_steps; });
    integer("schedule.steps", "sampling timesteps after uniform-stride respacing",
            [](auto& c) -> auto& { return c.steps; });
    dbl("schedule.beta_start", "first beta of the linear schedule",
        [](auto& c) -> auto& { return c.schedule_params.beta_start; });
    dbl("schedule.beta_end", "last beta of the linear schedule",
        [](auto& c) -> auto& { return c.schedule_params.beta_end; });
    dbl("schedule.cosine_offset", "offset s0 of the cosine schedule",
        [](auto& c) -> auto& { return c.schedule_params.cosine_offset; });
    dbl("schedule.max_beta", "upper clip of cosine betas", [](auto& c) -> auto& { return c.schedule_params.max_beta; });

    text("model", "analytic | mlp", [](auto& c) -> auto& { return c.model; });
    text("model.checkpoint", "checkpoint to load (mlp); empty trains in-run",
         [](auto& c) -> auto& { return c.checkpoint; });
    integer("model.width", "hidden width of the MLP", [](auto& c) -> auto& { return c.arch.width; });
    integer("model.hidden_layers", "hidden layers of the MLP", [](auto& c) -> auto& { return c.arch.hidden_layers; });
    integer("model.embed_dim", "width of the sinusoidal timestep embedding",
            [](auto& c) -> auto& { return c.arch.embed_dim; });
    integer("train.steps", "Adam steps", [](auto& c) -> auto& { return c.train.steps; });
    integer("train.batch", "minibatch size", [](auto& c) -> auto& { return c.train.batch; });
    dbl("train.lr", "Adam learning rate", [](auto& c) -> auto& { return c.train.learning_rate; });
    dbl("train.beta1", "Adam first-moment decay", [](auto& c) -> auto& { return c.train.beta1; });
    dbl("train.beta2", "Adam second-moment decay", [](auto& c) -> auto& { return c.train.beta2; });
    dbl("train.eps", "Adam denominator offset", [](auto& c) -> auto& { return c.train.adam_eps; });
    integer("train.data", "training points drawn from the benchmark",
            [](auto& c) -> auto& { return c.train_data; });

    add("guidance.kind", "self | naive_density",
        [](const ExperimentConfig& c) { return std::string(to_string(c.guidance.kind)); },
        [](ExperimentConfig& c, std::string_view v) { c.guidance.kind = parse_guidance_kind(detail::trim(v)); });
    dbl("guidance.w", "guidance scale w", [](auto& c) -> auto& { return c.guidance.w; });
    add("guidance.schedule", "fixed | switch_off | variance",
        [](const ExperimentConfig& c) { return std::string(to_string(c.guidance.schedule)); },
        [](ExperimentConfig& c, std::string_view v) { c.guidance.schedule = parse_weight_schedule(detail::trim(v)); });
    integer("guidance.t_mid", "switch-off threshold timestep", [](auto& c) -> auto& { return c.guidance.t_mid; });
    integer("guidance.n", "intermittent rate: guide when t mod n = 0", [](auto& c) -> auto& { return c.guidance.n; });
    dbl("guidance.s_fraction", "metric perturbation timestep as a fraction of T",
        [](auto& c) -> auto& { return c.guidance.s_fraction; });
    add("guidance.sg", "none | sg_first | sg_second",
        [](const ExperimentConfig& c) { return std::string(to_string(c.guidance.sg)); },
        [](ExperimentConfig& c, std::string_view v) { c.guidance.sg = parse_stop_gradient(detail::trim(v)); });
    add("guidance.distance", "squared_error | tanh_feature",
        [](const ExperimentConfig& c) { return c.guidance.distance.name(); },
        [](ExperimentConfig& c, std::string_view v) { c.guidance.distance = DistanceSpec::from_name(detail::trim(v)); });
    add("guidance.normalize", "l-infinity normalization of the guidance gradient",
        [](const ExperimentConfig& c) { return std::string(c.guidance.normalize_linf ? "true" : "false"); },
        [](ExperimentConfig& c, std::string_view v) { c.guidance.normalize_linf = detail::parse_bool("guidance.normalize", v); });
    integer("guidance.mc_samples", "metric noise draws per guided step",
            [](auto& c) -> auto& { return c.guidance.mc_samples; });

    integer("chains", "number of sampling chains", [](auto& c) -> auto& { return c.chains; });
    integer("seed", "root seed of every random stream", [](auto& c) -> auto& { return c.seed; });
    integer("threads", "worker threads (0 = hardware concurrency)", [](auto& c) -> auto& { return c.threads; });
    add("trace", "write per-step trace.csv",
        [](const ExperimentConfig& c) { return std::string(c.trace ? "true" : "false"); },
        [](ExperimentConfig& c, std::string_view v) { c.trace = detail::parse_bool("trace", v); });

    integer("eval.k_knn", "neighbors for AvgkNN", [](auto& c) -> auto& { return c.eval.k_knn; });
    integer("eval.k_lof", "neighbors for LOF", [](auto& c) -> auto& { return c.eval.k_lof; });
    add("eval.ref_mode", "real | generated | pooled reference set for AvgkNN and LOF",
        [](const ExperimentConfig& c) { return std::string(to_string(c.eval.ref_mode)); },
        [](ExperimentConfig& c, std::string_view v) { c.eval.ref_mode = parse_reference_mode(detail::trim(v)); });
    integer("eval.ref_size", "real points in the reference set", [](auto& c) -> auto& { return c.eval.ref_size; });
    dbl("eval.metric_t_fraction", "timestep (fraction of T) where the inference metric is recorded",
        [](auto& c) -> auto& { return c.eval.metric_t_fraction; });
    integer("eval.metric_mc", "noise draws for the recorded inference metric",
            [](auto& c) -> auto& { return c.eval.metric_mc; });
    dbl("eval.threshold_quantile", "data log-density quantile defining off-support samples",
        [](auto& c) -> auto& { return c.eval.threshold_quantile; });
    integer("eval.threshold_samples", "real draws used to estimate the threshold",
            [](auto& c) -> auto& { return c.eval.threshold_samples; });

    add("recipe.w_values", "guidance scales swept by table3a-analog",
        [](const ExperimentConfig& c) { return detail::join(c.recipe.w_values); },
        [](ExperimentConfig& c, std::string_view v) { c.recipe.w_values = detail::parse_list<double>("recipe.w_values", v); });
    add("recipe.n_values", "intermittent rates compared by the intermittent recipe",
        [](const ExperimentConfig& c) { return detail::join(c.recipe.n_values); },
        [](ExperimentConfig& c, std::string_view v) { c.recipe.n_values = detail::parse_list<int>("recipe.n_values", v); });
    integer("recipe.match_iterations", "bisection steps when matching density shifts",
            [](auto& c) -> auto& { return c.recipe.match_iterations; });
    integer("recipe.cases", "random cases checked by verify", [](auto& c) -> auto& { return c.recipe.cases; });

    text("out", "output directory", [](auto& c) -> auto& { return c.out; });
    return k;
  }();
  return keys;
}

inline const ConfigKey& find_config_key(std::string_view key) {
  for (const auto& k : config_keys()) {
    if (k.key == key) return k;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

/// Applies one "key=value" assignment.
inline void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  find_config_key(detail::trim(assignment.substr(0, eq))).set(cfg, assignment.substr(eq + 1));
}

/// Applies every assignment in `text` on top of `cfg`.
inline void apply_config_text(ExperimentConfig& cfg, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::map<std::string, int> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    if (seen.count(key)) {
      throw ConfigError("line " + std::to_string(lineno) + ": key '" + key + "' already set on line " +
                        std::to_string(seen[key]));
    }
    seen[key] = lineno;
    try {
      find_config_key(key).set(cfg, std::string_view(t).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  apply_config_text(cfg, text);
  return cfg;
}

inline void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str());
}

/// All keys, one "key = value" line each.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.key + " = " + k.get(cfg) + "\n";
  return out;
}

/// Hash of every key that can change results (out and threads excluded).
inline std::uint64_t config_fingerprint(const ExperimentConfig& cfg) {
  std::string text;
  for (const auto& k : config_keys()) {
    if (k.key == "out" || k.key == "threads") continue;
    text += k.key + "=" + k.get(cfg) + "\n";
  }
  return detail::fnv1a(text.data(), text.size());
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline GmmSpec benchmark_spec(const ExperimentConfig& cfg) {
  GmmSpec spec = cfg.benchmark == "inline" ? cfg.inline_gmm : benchmark_by_name(cfg.benchmark);
  spec.validate();
  return spec;
}

inline NoiseSchedule experiment_schedule(const ExperimentConfig& cfg) {
  return build_schedule(cfg.schedule_kind, cfg.base_steps, cfg.schedule_params).respaced(cfg.steps);
}

inline void validate(const ExperimentConfig& cfg) {
  const GmmSpec spec = benchmark_spec(cfg);
  const NoiseSchedule sched = experiment_schedule(cfg);
  cfg.guidance.validate(sched);
  if (cfg.model != "analytic" && cfg.model != "mlp") throw ConfigError("model must be analytic or mlp");
  if (cfg.model == "mlp") {
    if (cfg.arch.width < 1 || cfg.arch.hidden_layers < 0 || cfg.arch.embed_dim < 2 || cfg.arch.embed_dim % 2) {
      throw ConfigError("MLP needs width >= 1, hidden_layers >= 0 and an even embed_dim >= 2");
    }
    if (cfg.checkpoint.empty() && cfg.train_data < 1) throw ConfigError("train.data must be positive");
  }
  if (cfg.chains < 1) throw ConfigError("chains must be >= 1");
  if (cfg.eval.k_knn < 1 || cfg.eval.k_lof < 1) throw ConfigError("eval.k_knn and eval.k_lof must be >= 1");
  if (!(cfg.eval.metric_t_fraction > 0.0 && cfg.eval.metric_t_fraction <= 1.0)) {
    throw ConfigError("eval.metric_t_fraction must lie in (0, 1]");
  }
  if (cfg.eval.metric_mc < 1) throw ConfigError("eval.metric_mc must be >= 1");
  if (!(cfg.eval.threshold_quantile > 0.0 && cfg.eval.threshold_quantile < 1.0)) {
    throw ConfigError("eval.threshold_quantile must lie in (0, 1)");
  }
  if (cfg.eval.threshold_samples < 1) throw ConfigError("eval.threshold_samples must be >= 1");
  if (cfg.recipe.match_iterations < 1 || cfg.recipe.cases < 1) {
    throw ConfigError("recipe.match_iterations and recipe.cases must be >= 1");
  }
  if (cfg.out.empty()) throw ConfigError("out must not be empty");
  (void)spec;
}

}  // namespace minority
