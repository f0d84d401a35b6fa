#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>

#include "minority/errors.hpp"
#include "minority/gmm.hpp"
#include "minority/schedule.hpp"

namespace minority {

/// Noise predictor eps(x, t) with its input pullback.
///
/// The score is always derived as -eps / sqrt(1 - alpha_cum(t)), so the two
/// parameterizations agree by construction. Implementations must be safe for
/// concurrent const calls.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;

  virtual Eigen::Index dim() const = 0;

  virtual Vec eps(const Vec& x, int t, const NoiseSchedule& sched) const = 0;

  /// cotangent^T * d eps(x, t) / dx.
  virtual Vec input_vjp(const Vec& x, int t, const NoiseSchedule& sched, const Vec& cotangent) const = 0;

  Vec score(const Vec& x, int t, const NoiseSchedule& sched) const {
    return -eps(x, t, sched) / std::sqrt(1.0 - sched.alpha_cum(t));
  }

 protected:
  void check_dims(const Vec& x, int t, const NoiseSchedule& sched) const {
    sched.check_timestep(t);
    if (x.size() != dim()) throw DomainError("input dimension does not match model");
  }
};

/// Exact score of a Gaussian mixture pushed through the forward process.
class GmmScoreModel final : public ScoreModel {
 public:
  explicit GmmScoreModel(GmmSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

  const GmmSpec& spec() const noexcept { return spec_; }
  Eigen::Index dim() const override { return spec_.dim(); }

  Vec eps(const Vec& x, int t, const NoiseSchedule& sched) const override {
    check_dims(x, t, sched);
    const double a = sched.alpha_cum(t);
    return -std::sqrt(1.0 - a) * mixture_score(spec_, x, a);
  }

  Vec input_vjp(const Vec& x, int t, const NoiseSchedule& sched, const Vec& cotangent) const override {
    check_dims(x, t, sched);
    if (cotangent.size() != x.size()) throw DomainError("cotangent dimension does not match model");
    const double a = sched.alpha_cum(t);
    return -std::sqrt(1.0 - a) * mixture_hessian_product(spec_, x, a, cotangent);
  }

 private:
  GmmSpec spec_;
};

/// Forwards to another model and counts forward and backward calls.
class CountingModel final : public ScoreModel {
 public:
  explicit CountingModel(const ScoreModel& inner) : inner_(inner) {}

  Eigen::Index dim() const override { return inner_.dim(); }

  Vec eps(const Vec& x, int t, const NoiseSchedule& sched) const override {
    forwards_.fetch_add(1, std::memory_order_relaxed);
    return inner_.eps(x, t, sched);
  }

  Vec input_vjp(const Vec& x, int t, const NoiseSchedule& sched, const Vec& cotangent) const override {
    backwards_.fetch_add(1, std::memory_order_relaxed);
    return inner_.input_vjp(x, t, sched, cotangent);
  }

  std::uint64_t forwards() const noexcept { return forwards_.load(); }
  std::uint64_t backwards() const noexcept { return backwards_.load(); }
  void reset() noexcept {
    forwards_ = 0;
    backwards_ = 0;
  }

 private:
  const ScoreModel& inner_;
  mutable std::atomic<std::uint64_t> forwards_{0};
  mutable std::atomic<std::uint64_t> backwards_{0};
};

}  // namespace minority
