#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "minority/config.hpp"
#include "minority/harness.hpp"
#include "minority/recipes.hpp"

namespace {

enum ExitCode : int { kOk = 0, kInternal = 1, kConfig = 2, kIo = 3, kNumeric = 4 };

struct CommonArgs {
  std::string config;
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::string out;
  std::size_t chains = 0;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "config file of key = value lines");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&a](const std::uint64_t& v) { a.seed = v; a.has_seed = true; }, "root seed");
  cmd->add_option("--out", a.out, "output directory");
  cmd->add_option("--chains", a.chains, "number of sampling chains");
  cmd->add_option("--set", a.sets, "override as key=value (repeatable)");
}

minority::ExperimentConfig resolve(minority::ExperimentConfig cfg, const CommonArgs& a) {
  if (!a.config.empty()) minority::apply_config_file(cfg, a.config);
  if (a.has_seed) cfg.seed = a.seed;
  if (a.chains) cfg.chains = a.chains;
  if (!a.out.empty()) cfg.out = a.out;
  for (const auto& s : a.sets) minority::apply_override(cfg, s);
  return cfg;
}

std::string key_listing() {
  std::string out = "\nConfig keys (--set key=value or one per line in --config):\n";
  const minority::ExperimentConfig defaults;
  for (const auto& k : minority::config_keys()) {
    std::string line = "  " + k.key;
    line.resize(std::max<std::size_t>(line.size() + 1, 28), ' ');
    out += line + k.help + " [" + k.get(defaults) + "]\n";
  }
  out += "\nRecipes:";
  for (const auto& r : minority::recipe_names()) out += " " + r;
  out += "\nExit codes: 0 ok, 2 config error, 3 I/O or file-format error, 4 numeric degeneracy, 1 other.\n";
  return out;
}

int cmd_train(minority::ExperimentConfig cfg) {
  using namespace minority;
  cfg.model = "mlp";
  const std::filesystem::path dir = cfg.out;
  const std::string ckpt = cfg.checkpoint.empty() ? (dir / "model.ckpt").string() : cfg.checkpoint;
  cfg.checkpoint.clear();
  validate(cfg);
  const auto start = std::chrono::steady_clock::now();
  const GmmSpec spec = benchmark_spec(cfg);
  const MlpEpsModel model = train_mlp(cfg, spec);
  std::filesystem::create_directories(std::filesystem::path(ckpt).parent_path().empty()
                                          ? std::filesystem::path(".")
                                          : std::filesystem::path(ckpt).parent_path());
  save_checkpoint(model, training_schedule(cfg), ckpt);
  cfg.checkpoint = ckpt;

  const auto& h = model.loss_history();
  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < h.size(); ++i) csv += std::to_string(i) + "," + detail::format_double(h[i]) + "\n";
  auto window_mean = [&h](std::size_t from, std::size_t to) {
    double s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += h[i];
    return to > from ? s / static_cast<double>(to - from) : 0.0;
  };
  const std::size_t w = std::min<std::size_t>(100, h.size());
  nlohmann::json j{{"schema", kSummarySchema},
                   {"fingerprint", hex64(config_fingerprint(cfg))},
                   {"seed", cfg.seed},
                   {"checkpoint", ckpt},
                   {"steps", h.size()},
                   {"parameters", model.parameter_count()},
                   {"leading_loss_mean", window_mean(0, w)},
                   {"trailing_loss_mean", window_mean(h.size() - w, h.size())},
                   {"wall_clock_seconds",
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
  write_file_atomic(dir / "loss.csv", csv);
  write_file_atomic(dir / "summary.json", j.dump(2) + "\n");
  write_file_atomic(dir / "resolved-config.txt", "# fingerprint=" + hex64(config_fingerprint(cfg)) +
                                                     " seed=" + std::to_string(cfg.seed) + "\n" +
                                                     serialize_config(cfg));
  std::cout << "trained " << h.size() << " steps, loss " << j["leading_loss_mean"] << " -> "
            << j["trailing_loss_mean"] << "\ncheckpoint: " << ckpt << "\n";
  return kOk;
}

int cmd_run(const minority::ExperimentConfig& cfg, bool evaluate) {
  minority::RunOptions opts;
  opts.evaluate = evaluate;
  const auto report = minority::run_experiment(cfg, opts);
  auto j = report.summary_json();
  std::cout << "chains " << report.samples.size() << ", mean log-density " << j["log_density"]["mean"]
            << ", off-support " << j["off_support"]["count"];
  if (evaluate) std::cout << ", mean AvgkNN " << j["avg_knn"]["mean"] << ", mean LOF " << j["lof"]["mean"];
  std::cout << "\noutputs in " << cfg.out << "\n";
  return kOk;
}

int cmd_verify(const minority::ExperimentConfig& cfg, const std::string& mode) {
  const auto report = minority::run_verification(cfg, minority::parse_verify_mode(mode));
  minority::write_verification(report, cfg, cfg.out);
  std::cout << mode << ": " << report.cases.size() << " cases, max pointwise rel. err "
            << report.max_rel_err << ", unit-Gaussian closed-form rel. err " << report.max_unit_rel_err
            << "\noutputs in " << cfg.out << "\n";
  return kOk;
}

int cmd_recipe(const minority::ExperimentConfig& cfg, const std::string& name) {
  const auto result = minority::run_recipe(name, cfg);
  std::cout << result.summary.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-guided minority sampling for diffusion models on Gaussian-mixture benchmarks"};
  app.footer(key_listing());
  app.require_subcommand(1);

  CommonArgs train_args, sample_args, eval_args, verify_args, recipe_args;
  auto* train = app.add_subcommand("train", "train the MLP noise predictor and save a checkpoint");
  auto* sample = app.add_subcommand("sample", "draw guided samples (samples.csv, summary.json)");
  auto* eval = app.add_subcommand("eval", "sample and evaluate (adds metrics.csv)");
  auto* verify = app.add_subcommand("verify", "check the minority-score / ELBO identity");
  auto* recipe = app.add_subcommand("recipe", "run a named experiment recipe");
  for (auto [cmd, args] : {std::pair{train, &train_args}, {sample, &sample_args}, {eval, &eval_args},
                           {verify, &verify_args}, {recipe, &recipe_args}}) {
    add_common(cmd, *args);
    cmd->footer(key_listing());
  }
  std::string mode = "prop1";
  verify->add_option("--mode", mode, "prop1 | corollary1")->check(CLI::IsMember({"prop1", "corollary1"}));
  std::string recipe_name;
  recipe->add_option("--recipe", recipe_name, "recipe name")->required()->check(CLI::IsMember(minority::recipe_names()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(resolve({}, train_args));
    if (*sample) return cmd_run(resolve({}, sample_args), false);
    if (*eval) return cmd_run(resolve({}, eval_args), true);
    if (*verify) {
      auto cfg = resolve({}, verify_args);
      if (verify_args.out.empty() && cfg.out == "out") cfg.out = "out/verify-" + mode;
      return cmd_verify(cfg, mode);
    }
    if (*recipe) return cmd_recipe(resolve(minority::recipe_base(recipe_name), recipe_args), recipe_name);
  } catch (const minority::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const minority::DomainError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kConfig;
  } catch (const minority::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const minority::FormatError& e) {
    std::cerr << "file format error: " << e.what() << "\n";
    return kIo;
  } catch (const minority::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
