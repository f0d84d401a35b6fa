// Samples the 8-component ring with and without self-guidance and reports how
// the mass moves toward the light components.
#include <cstdio>
#include <vector>

#include "minority.hpp"

using namespace minority;

static std::vector<int> component_counts(const GmmSpec& spec, const std::vector<Vec>& xs) {
  std::vector<int> counts(static_cast<std::size_t>(spec.components()), 0);
  for (const auto& x : xs) {
    int best = 0;
    for (int k = 1; k < spec.components(); ++k) {
      if ((x - spec.means[k]).squaredNorm() < (x - spec.means[best]).squaredNorm()) best = k;
    }
    ++counts[static_cast<std::size_t>(best)];
  }
  return counts;
}

int main() {
  const GmmSpec spec = gmm8_ring();
  const GmmScoreModel model(spec);
  const NoiseSchedule sched = build_schedule(ScheduleKind::cosine, 1000).respaced(250);

  GuidanceConfig cfg;
  cfg.s_fraction = 0.2;
  std::printf("weights:   ");
  for (double w : spec.weights) std::printf(" %5.2f", w);
  std::printf("\n");
  for (double w : {0.0, 2.0, 6.0}) {
    cfg.w = w;
    const auto result = guided_sample(model, sched, cfg, spec.dim(), 2000, 7);
    double ld = 0.0;
    for (const auto& x : result.samples) ld += mixture_log_density(spec, x);
    const auto counts = component_counts(spec, result.samples);
    std::printf("w = %.1f:  ", w);
    for (int c : counts) std::printf(" %5.3f", c / 2000.0);
    std::printf("   mean log-density %.3f\n", ld / 2000.0);
  }
}
