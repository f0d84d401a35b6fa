#include <gtest/gtest.h>

#include <cmath>

#include "minority/metric.hpp"
#include "minority/gmm.hpp"

using namespace minority;

namespace {

NoiseSchedule single_step(double beta) {
  ScheduleParams p;
  p.beta_start = p.beta_end = beta;
  return build_schedule(ScheduleKind::linear, 1, p);
}

const NoiseSchedule& sched() {
  static const NoiseSchedule s = build_schedule(ScheduleKind::cosine, 1000).respaced(250);
  return s;
}

}  // namespace

TEST(Tweedie, HandExamples) {
  const Vec x = (Vec(2) << 1.0, -2.0).finished();
  EXPECT_TRUE(tweedie_from_score(x, 1.0, Vec::Zero(2)).isApprox(x));
  EXPECT_TRUE(tweedie_from_score(x, 0.25, Vec::Zero(2)).isApprox(2.0 * x));
  EXPECT_TRUE(tweedie_from_score(x, 0.5, -x).isApprox(0.5 * x / std::sqrt(0.5)));
  EXPECT_THROW(tweedie_from_score(x, 0.0, x), NumericError);
}

TEST(Tweedie, UnitGaussianShrinksBySqrtAlpha) {
  const GmmScoreModel model(unit_gaussian(2));
  const Vec x = (Vec(2) << 0.3, 1.7).finished();
  for (int t : {1, 100, 200}) {
    EXPECT_TRUE(tweedie(x, t, model, sched()).isApprox(std::sqrt(sched().alpha_cum(t)) * x, 1e-12));
  }
}

TEST(MinorityScore, UnitGaussianAtOriginMatchesClosedForm) {
  const auto s = single_step(0.5);
  const GmmScoreModel model(unit_gaussian(1));
  Rng rng(1);
  const auto r = minority_score(Vec::Zero(1), 1, model, s, DistanceSpec::squared_error(), 4000, rng);
  EXPECT_NEAR(r.value, 0.25, 3.0 * r.std_error());
  EXPECT_EQ(r.mc_samples, 4000);
  EXPECT_EQ(r.draws.size(), 4000u);
}

TEST(MinorityScore, GrowsWithDistanceFromTheMode) {
  const GmmScoreModel model(unit_gaussian(2));
  const int t = 125;
  double prev = -1.0;
  for (double r : {0.0, 1.0, 2.0, 4.0}) {
    Rng rng(2);
    const auto m = minority_score(r * Vec::Unit(2, 0), t, model, sched(), DistanceSpec::squared_error(), 256, rng);
    EXPECT_GT(m.value, prev);
    prev = m.value;
  }
}

TEST(MinorityScore, FarPointExceedsModeAtEveryTimestep) {
  const GmmScoreModel model(unit_gaussian(2));
  Rng rng(8);
  // Antithetic pairs cancel the x0-noise cross term, leaving the ordering of the expectations.
  std::vector<Vec> noise = draw_noise(rng, 2, 128);
  for (int i = 0; i < 128; ++i) noise.push_back(-noise[static_cast<std::size_t>(i)]);
  for (int t = 1; t <= 250; ++t) {
    const auto far = minority_score(3.0 * Vec::Unit(2, 1), t, model, sched(), DistanceSpec::squared_error(), noise);
    const auto mode = minority_score(Vec::Zero(2), t, model, sched(), DistanceSpec::squared_error(), noise);
    EXPECT_GT(far.value, mode.value) << t;
  }
}

TEST(MinorityScore, FixedNoiseIsDeterministicAndRejectsEmpty) {
  const GmmScoreModel model(gmm8_ring());
  Rng rng(3);
  const auto noise = draw_noise(rng, 2, 4);
  const Vec x0 = Vec::Ones(2);
  const auto a = minority_score(x0, 40, model, sched(), DistanceSpec::squared_error(), noise);
  const auto b = minority_score(x0, 40, model, sched(), DistanceSpec::squared_error(), noise);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.draws, b.draws);
  EXPECT_THROW(minority_score(x0, 40, model, sched(), DistanceSpec::squared_error(), std::span<const Vec>{}),
               DomainError);
}

TEST(InferenceMetric, IsMinorityScoreOfThePosteriorMean) {
  const GmmScoreModel model(gmm8_ring());
  Rng rng(4);
  const auto noise = draw_noise(rng, 2, 3);
  const Vec x_t = rng.normal_vec(2);
  Rng unused(0);
  const auto a = inference_metric(x_t, 125, 50, model, sched(), DistanceSpec::squared_error(), noise, unused);
  const auto b = minority_score(tweedie(x_t, 125, model, sched()), 50, model, sched(), DistanceSpec::squared_error(),
                                noise);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.timestep, 50);
}

TEST(InferenceMetric, UnitGaussianClosedForm) {
  const GmmScoreModel model(unit_gaussian(2));
  const int s = 100;
  const double a = sched().alpha_cum(s);
  Rng rng(5);
  const auto r =
      inference_metric(Vec::Zero(2), 125, s, model, sched(), DistanceSpec::squared_error(), std::nullopt, rng, 10000);
  EXPECT_NEAR(r.value, a * (1.0 - a) * 2.0, 3.0 * r.std_error());
}

TEST(InferenceMetric, RejectsBadTimestep) {
  const GmmScoreModel model(unit_gaussian(2));
  Rng rng(6);
  EXPECT_THROW(inference_metric(Vec::Zero(2), 1, 0, model, sched(), DistanceSpec::squared_error(), std::nullopt, rng),
               DomainError);
}

TEST(Distance, TanhFeatureGradientsMatchFiniteDifferences) {
  const auto d = DistanceSpec::from_name("tanh_feature");
  Rng rng(7);
  const Vec a = rng.normal_vec(3), b = rng.normal_vec(3);
  const auto [ga, gb] = d.gradients(a, b);
  for (int i = 0; i < 3; ++i) {
    const double h = 1e-6;
    Vec ap = a, am = a, bp = b, bm = b;
    ap[i] += h;
    am[i] -= h;
    bp[i] += h;
    bm[i] -= h;
    EXPECT_NEAR(ga[i], (d(ap, b) - d(am, b)) / (2 * h), 1e-7);
    EXPECT_NEAR(gb[i], (d(a, bp) - d(a, bm)) / (2 * h), 1e-7);
  }
  EXPECT_EQ(d.name(), "tanh_feature");
  EXPECT_THROW(DistanceSpec::from_name("l1"), ConfigError);
}
