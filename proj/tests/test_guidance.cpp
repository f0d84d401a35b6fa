#include <gtest/gtest.h>

#include <cmath>

#include "guidance_objective.hpp"
#include "minority/gmm.hpp"
#include "minority/guidance.hpp"
#include "minority/mlp.hpp"

using namespace minority;

namespace {

const NoiseSchedule& sched() {
  static const NoiseSchedule s = build_schedule(ScheduleKind::cosine, 1000).respaced(250);
  return s;
}

GuidanceConfig raw_cfg(StopGradient sg) {
  GuidanceConfig c;
  c.sg = sg;
  c.normalize_linf = false;
  c.s_fraction = 0.2;
  return c;
}

void expect_matches_finite_differences(const ScoreModel& model, double tol, std::uint64_t seed) {
  Rng rng(seed);
  for (auto sg : {StopGradient::none, StopGradient::sg_first, StopGradient::sg_second}) {
    const auto cfg = raw_cfg(sg);
    for (int i = 0; i < 10; ++i) {
      const int t = rng.uniform_int(1, 250);
      const Vec x = 1.5 * rng.normal_vec(2);
      const std::vector<Vec> e{rng.normal_vec(2)};
      const Vec g = evaluate_guidance(x, t, cfg, model, sched(), e).direction;
      const Vec fd = oracle::central_difference(x, t, cfg, model, sched(), e[0], oracle::fd_step(sched(), t, x));
      EXPECT_LE((g - fd).norm(), tol * std::max(1.0, fd.norm())) << to_string(sg) << " t=" << t;
    }
  }
}

}  // namespace

TEST(Weight, Schedules) {
  GuidanceConfig c;
  c.w = 2.0;
  c.schedule = WeightSchedule::fixed;
  EXPECT_EQ(weight(10, c, sched()), 2.0);
  c.schedule = WeightSchedule::variance;
  EXPECT_EQ(weight(10, c, sched()), 2.0 * sched().reverse_var(10));
  c.schedule = WeightSchedule::switch_off;
  c.t_mid = 100;
  EXPECT_EQ(weight(100, c, sched()), 2.0);
  EXPECT_EQ(weight(101, c, sched()), 2.0);
  EXPECT_EQ(weight(99, c, sched()), 0.0);
  EXPECT_THROW(weight(0, c, sched()), DomainError);
}

TEST(GuidanceConfig, Validation) {
  GuidanceConfig c;
  EXPECT_NO_THROW(c.validate(sched()));
  c.w = -1;
  EXPECT_THROW(c.validate(sched()), ConfigError);
  c = {};
  c.n = 0;
  EXPECT_THROW(c.validate(sched()), ConfigError);
  c = {};
  c.s_fraction = 1.0;
  EXPECT_THROW(c.validate(sched()), ConfigError);
  c = {};
  c.schedule = WeightSchedule::switch_off;
  c.t_mid = 251;
  EXPECT_THROW(c.validate(sched()), ConfigError);
  EXPECT_EQ(parse_stop_gradient("sg_first"), StopGradient::sg_first);
  EXPECT_THROW(parse_stop_gradient("both"), ConfigError);
  EXPECT_EQ(parse_weight_schedule(to_string(WeightSchedule::switch_off)), WeightSchedule::switch_off);
}

TEST(Guidance, ZeroResidualGivesZeroDirection) {
  const GmmScoreModel model(unit_gaussian(2));
  auto cfg = raw_cfg(StopGradient::sg_second);
  cfg.normalize_linf = true;
  const std::vector<Vec> e{Vec::Zero(2)};
  const auto g = evaluate_guidance(Vec::Zero(2), 100, cfg, model, sched(), e);
  EXPECT_EQ(g.direction.norm(), 0.0);
  EXPECT_EQ(g.metric, 0.0);
}

TEST(Guidance, NormalizedHasUnitMaxNorm) {
  const GmmScoreModel model(gmm8_ring());
  GuidanceConfig cfg;
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const std::vector<Vec> e{rng.normal_vec(2)};
    const auto g = evaluate_guidance(2.0 * rng.normal_vec(2), rng.uniform_int(1, 250), cfg, model, sched(), e);
    ASSERT_GT(g.raw_linf, 0.0);
    EXPECT_NEAR(g.direction.cwiseAbs().maxCoeff(), 1.0, 1e-15);
  }
}

TEST(Guidance, FullGradientDecomposesIntoStopGradientParts) {
  const GmmScoreModel model(gmm8_ring());
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const int t = rng.uniform_int(1, 250);
    const Vec x = 2.0 * rng.normal_vec(2);
    const std::vector<Vec> e{rng.normal_vec(2), rng.normal_vec(2)};
    const Vec full = evaluate_guidance(x, t, raw_cfg(StopGradient::none), model, sched(), e).direction;
    const Vec a = evaluate_guidance(x, t, raw_cfg(StopGradient::sg_first), model, sched(), e).direction;
    const Vec b = evaluate_guidance(x, t, raw_cfg(StopGradient::sg_second), model, sched(), e).direction;
    EXPECT_LE((full - a - b).norm(), 1e-6 * std::max(1.0, full.norm()));
  }
}

TEST(Guidance, AnalyticModelMatchesFiniteDifferences) {
  expect_matches_finite_differences(GmmScoreModel(gmm8_ring()), 1e-4, 3);
}

TEST(Guidance, MlpModelMatchesFiniteDifferences) {
  Rng init(4);
  MlpArchitecture arch;
  arch.width = 32;
  expect_matches_finite_differences(MlpEpsModel(arch, init), 1e-3, 5);
}

TEST(Guidance, MetricIsMeanOverDraws) {
  const GmmScoreModel model(gmm8_ring());
  const auto cfg = raw_cfg(StopGradient::sg_second);
  Rng rng(6);
  const Vec x = rng.normal_vec(2);
  const std::vector<Vec> e{rng.normal_vec(2), rng.normal_vec(2)};
  const double m0 = evaluate_guidance(x, 150, cfg, model, sched(), std::span(e).first(1)).metric;
  const double m1 = evaluate_guidance(x, 150, cfg, model, sched(), std::span(e).last(1)).metric;
  EXPECT_NEAR(evaluate_guidance(x, 150, cfg, model, sched(), e).metric, 0.5 * (m0 + m1), 1e-12);
}

TEST(NaiveGuidance, UnitGaussianPointsAwayFromTheMode) {
  const GmmScoreModel model(unit_gaussian(2));
  const Vec x = (Vec(2) << 0.5, -2.0).finished();
  EXPECT_TRUE(naive_density_guidance(x, 100, model, sched(), false).isApprox(x, 1e-12));
  EXPECT_TRUE(naive_density_guidance(x, 100, model, sched(), true).isApprox(x / 2.0, 1e-12));
}

TEST(NaiveGuidance, ZeroAtAMode) {
  const GmmScoreModel model(unit_gaussian(2));
  EXPECT_EQ(naive_density_guidance(Vec::Zero(2), 100, model, sched()).norm(), 0.0);
}
