#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <ostream>
#include <thread>
#include <vector>

#include "minority/errors.hpp"
#include "minority/guidance.hpp"
#include "minority/rng.hpp"
#include "minority/schedule.hpp"
#include "minority/score_model.hpp"

namespace minority {

struct StepRecord {
  int t = 0;
  bool guided = false;
  double weight = 0.0;
  double guidance_l2 = 0.0;
  double guidance_linf = 0.0;
  double metric = std::numeric_limits<double>::quiet_NaN();
};

/// State of one sampling chain. `rng` drives the reverse-process noise only.
struct ChainState {
  Vec x;
  int t = 0;
  Rng rng{0};
  std::vector<StepRecord> trace;
};

/// x_{t-1} = (x_t + beta_t * score(x_t, t)) / sqrt(1 - beta_t) + sqrt(beta_t) * z,
/// with z = 0 at t = 1.
inline ChainState ancestral_step(ChainState state, const ScoreModel& model, const NoiseSchedule& sched) {
  if (state.t < 1) throw DomainError("cannot step a chain that already reached t = 0");
  const int t = state.t;
  const double beta = sched.beta(t);
  Vec mean = (state.x + beta * model.score(state.x, t, sched)) / std::sqrt(1.0 - beta);
  if (t > 1) mean += std::sqrt(sched.reverse_var(t)) * state.rng.normal_vec(state.x.size());
  state.x = std::move(mean);
  state.t = t - 1;
  return state;
}

struct SampleOptions {
  unsigned threads = 1;
  bool trace = false;
  /// Also return each chain's pre-step state x_t at this timestep.
  std::optional<int> capture_t;
};

struct SampleResult {
  std::vector<Vec> samples;
  std::vector<std::vector<StepRecord>> traces;
  std::vector<Vec> captured;
  /// Guidance evaluations per chain.
  std::size_t guidance_evaluations = 0;
};

/// Number of t in 1..T with t mod n == 0.
inline std::size_t guided_step_count(int steps, int n) { return n < 1 ? 0 : static_cast<std::size_t>(steps / n); }

namespace detail {

/// Runs fn(i) for i in [0, count) over `threads` workers. Each index is
/// handled by exactly one worker, so results written per index do not depend
/// on scheduling.
template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Reverse-process noise stream of chain `chain`.
inline Rng step_stream(std::uint64_t seed, std::size_t chain) { return Rng(seed).split(chain).split(0); }
/// Metric noise stream of chain `chain`, disjoint from the step stream.
inline Rng guidance_stream(std::uint64_t seed, std::size_t chain) { return Rng(seed).split(chain).split(1); }

}  // namespace detail

/// Unguided ancestral sampling from x_T ~ N(0, I).
inline std::vector<Vec> ancestral_sample(const ScoreModel& model, const NoiseSchedule& sched, Eigen::Index dim,
                                         std::size_t chains, std::uint64_t seed, unsigned threads = 1) {
  std::vector<Vec> out(chains);
  detail::parallel_for(chains, threads, [&](std::size_t c) {
    ChainState st;
    st.rng = detail::step_stream(seed, c);
    st.x = st.rng.normal_vec(dim);
    st.t = sched.steps();
    while (st.t > 0) st = ancestral_step(std::move(st), model, sched);
    out[c] = std::move(st.x);
  });
  return out;
}

/// Self-guided sampler. For t = T..1 the chain takes an ancestral step and,
/// when t mod n == 0, adds weight(t) * g(x_t) evaluated at the pre-step state.
inline SampleResult guided_sample(const ScoreModel& model, const NoiseSchedule& sched, const GuidanceConfig& cfg,
                                  Eigen::Index dim, std::size_t chains, std::uint64_t seed,
                                  const SampleOptions& opts = {}) {
  cfg.validate(sched);
  if (chains < 1) throw ConfigError("need at least one chain");
  if (opts.capture_t) sched.check_timestep(*opts.capture_t);

  SampleResult result;
  result.samples.resize(chains);
  if (opts.trace) result.traces.resize(chains);
  if (opts.capture_t) result.captured.resize(chains);
  result.guidance_evaluations = guided_step_count(sched.steps(), cfg.n);

  detail::parallel_for(chains, opts.threads, [&](std::size_t c) {
    ChainState st;
    st.rng = detail::step_stream(seed, c);
    Rng guide_rng = detail::guidance_stream(seed, c);
    st.x = st.rng.normal_vec(dim);
    st.t = sched.steps();
    while (st.t > 0) {
      const int t = st.t;
      if (opts.capture_t && *opts.capture_t == t) result.captured[c] = st.x;
      StepRecord rec;
      rec.t = t;
      std::optional<Vec> g;
      if (t % cfg.n == 0) {
        GuidanceEval ge;
        if (cfg.kind == GuidanceKind::naive_density) {
          ge = evaluate_naive_guidance(st.x, t, model, sched, cfg.normalize_linf);
        } else {
          const auto noises = draw_noise(guide_rng, dim, cfg.mc_samples);
          ge = evaluate_guidance(st.x, t, cfg, model, sched, noises);
        }
        rec.guided = true;
        rec.weight = weight(t, cfg, sched);
        rec.guidance_l2 = ge.raw_l2;
        rec.guidance_linf = ge.raw_linf;
        rec.metric = ge.metric;
        g = std::move(ge.direction);
      }
      st = ancestral_step(std::move(st), model, sched);
      if (g) st.x += rec.weight * *g;
      if (opts.trace) st.trace.push_back(rec);
    }
    result.samples[c] = std::move(st.x);
    if (opts.trace) result.traces[c] = std::move(st.trace);
  });
  return result;
}

/// Model calls per chain implied by the sampler: one forward per step, plus
/// (1 + m) forwards and 1 (sg_second) or (m + 1) pullbacks per guided step.
struct CallCounts {
  std::uint64_t forwards = 0;
  std::uint64_t backwards = 0;
};

inline CallCounts expected_calls_per_chain(const NoiseSchedule& sched, const GuidanceConfig& cfg) {
  const auto guided = static_cast<std::uint64_t>(guided_step_count(sched.steps(), cfg.n));
  const auto m = static_cast<std::uint64_t>(cfg.mc_samples);
  CallCounts c;
  c.forwards = static_cast<std::uint64_t>(sched.steps());
  if (cfg.kind == GuidanceKind::naive_density) {
    c.forwards += guided;
    return c;
  }
  c.forwards += guided * (1 + m);
  c.backwards = guided * (cfg.sg == StopGradient::sg_second ? 1 : m + 1);
  return c;
}

namespace detail {

inline void write_number(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}

}  // namespace detail

/// Per-step trace rows: chain,t,guided,weight,guidance_l2,guidance_linf,metric.
inline void write_trace_csv(std::ostream& os, const SampleResult& result) {
  os << "chain,t,guided,weight,guidance_l2,guidance_linf,metric\n";
  for (std::size_t c = 0; c < result.traces.size(); ++c) {
    for (const auto& r : result.traces[c]) {
      os << c << ',' << r.t << ',' << (r.guided ? 1 : 0) << ',';
      detail::write_number(os, r.weight);
      os << ',';
      detail::write_number(os, r.guidance_l2);
      os << ',';
      detail::write_number(os, r.guidance_linf);
      os << ',';
      detail::write_number(os, r.metric);
      os << '\n';
    }
  }
}

}  // namespace minority
