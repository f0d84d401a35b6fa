#include <gtest/gtest.h>

#include "minority/config.hpp"

using namespace minority;

TEST(Config, SerializeParseRoundTripIsLossless) {
  ExperimentConfig cfg;
  apply_override(cfg, "guidance.w=0.1");
  apply_override(cfg, "schedule.beta_end=0.0123456789012345");
  apply_override(cfg, "recipe.w_values=0,0.5,3");
  apply_override(cfg, "eval.ref_mode=generated");
  apply_override(cfg, "guidance.sg=none");
  const std::string text = serialize_config(cfg);
  const ExperimentConfig back = parse_config(text);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(config_fingerprint(back), config_fingerprint(cfg));
  EXPECT_EQ(back.guidance.w, 0.1);
  EXPECT_EQ(back.schedule_params.beta_end, 0.0123456789012345);
  EXPECT_EQ(back.recipe.w_values, (std::vector<double>{0, 0.5, 3}));
  EXPECT_EQ(back.eval.ref_mode, ReferenceMode::generated);
}

TEST(Config, EveryKeyIsSerialized) {
  const std::string text = serialize_config(ExperimentConfig{});
  for (const auto& k : config_keys()) {
    EXPECT_NE(text.find(k.key + " = "), std::string::npos) << k.key;
    EXPECT_FALSE(k.help.empty()) << k.key;
  }
}

TEST(Config, CommentsAndBlankLinesAreIgnored) {
  const auto cfg = parse_config("# header\n\n  seed = 17  \nchains=3\n");
  EXPECT_EQ(cfg.seed, 17u);
  EXPECT_EQ(cfg.chains, 3u);
}

TEST(Config, RejectsUnknownDuplicateAndMalformed) {
  EXPECT_THROW(parse_config("no.such.key = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("seed 1\n"), ConfigError);
  EXPECT_THROW(parse_config("seed = abc\n"), ConfigError);
  EXPECT_THROW(parse_config("guidance.w = 1.5x\n"), ConfigError);
  EXPECT_THROW(parse_config("trace = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("guidance.sg = sometimes\n"), ConfigError);
  ExperimentConfig cfg;
  EXPECT_THROW(apply_override(cfg, "seed"), ConfigError);
}

TEST(Config, FingerprintIgnoresOutputDirectoryAndThreads) {
  ExperimentConfig a, b;
  b.out = "elsewhere";
  b.threads = 7;
  EXPECT_EQ(config_fingerprint(a), config_fingerprint(b));
  b.seed = 1;
  EXPECT_NE(config_fingerprint(a), config_fingerprint(b));
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Config, InlineMixture) {
  ExperimentConfig cfg;
  apply_override(cfg, "benchmark=inline");
  apply_override(cfg, "gmm.components=0.7:0,0:0.1; 0.3:2,1:0.2");
  const GmmSpec spec = benchmark_spec(cfg);
  ASSERT_EQ(spec.components(), 2);
  EXPECT_EQ(spec.weights[1], 0.3);
  EXPECT_EQ(spec.means[1], (Vec(2) << 2, 1).finished());
  EXPECT_EQ(spec.variances[0], 0.1);
  const auto back = parse_config(serialize_config(cfg));
  EXPECT_EQ(detail::format_gmm(benchmark_spec(back)), detail::format_gmm(spec));
  EXPECT_THROW(apply_override(cfg, "gmm.components=0.5:0,0"), ConfigError);
}

TEST(Config, ValidateCatchesInconsistentSettings) {
  ExperimentConfig cfg;
  EXPECT_NO_THROW(validate(cfg));
  cfg.steps = 2000;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = {};
  cfg.chains = 0;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = {};
  cfg.eval.threshold_quantile = 0.0;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = {};
  cfg.model = "mlp";
  EXPECT_NO_THROW(validate(cfg));
  cfg.model = "transformer";
  EXPECT_THROW(validate(cfg), ConfigError);
}

TEST(Config, ExperimentScheduleIsRespacedBase) {
  ExperimentConfig cfg;
  const auto s = experiment_schedule(cfg);
  EXPECT_EQ(s.steps(), 250);
  EXPECT_EQ(s.base_steps(), 1000);
  EXPECT_EQ(s.base_fingerprint(), build_schedule(ScheduleKind::cosine, 1000).fingerprint());
}
