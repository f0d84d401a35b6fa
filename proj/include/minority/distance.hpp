#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <string_view>
#include <utility>

#include "minority/errors.hpp"
#include "minority/rng.hpp"

namespace minority {

/// Fixed map from data space to a feature space, with its pullback.
struct FeatureMap {
  std::string name;
  std::function<Vec(const Vec&)> map;
  /// (x, cotangent) -> cotangent^T * d map(x) / dx
  std::function<Vec(const Vec&, const Vec&)> vjp;
};

/// Elementwise tanh(x / scale); saturates far from the origin.
inline FeatureMap tanh_features(double scale = 2.0) {
  return FeatureMap{
      "tanh",
      [scale](const Vec& x) -> Vec { return (x / scale).array().tanh().matrix(); },
      [scale](const Vec& x, const Vec& u) -> Vec {
        const Eigen::ArrayXd th = (x / scale).array().tanh();
        return (u.array() * (1.0 - th.square()) / scale).matrix();
      }};
}

enum class DistanceKind { squared_error, feature_map };

/// Discrepancy d(a, b) = ||phi(a) - phi(b)||^2 with phi the identity for
/// squared error.
class DistanceSpec {
 public:
  DistanceSpec() = default;

  static DistanceSpec squared_error() { return DistanceSpec(); }

  static DistanceSpec feature(FeatureMap fmap) {
    DistanceSpec d;
    d.kind_ = DistanceKind::feature_map;
    d.fmap_ = std::move(fmap);
    return d;
  }

  static DistanceSpec from_name(std::string_view name) {
    if (name == "squared_error") return squared_error();
    if (name == "tanh_feature") return feature(tanh_features());
    throw ConfigError("unknown distance '" + std::string(name) + "'");
  }

  DistanceKind kind() const noexcept { return kind_; }

  std::string name() const { return kind_ == DistanceKind::squared_error ? "squared_error" : fmap_.name + "_feature"; }

  double operator()(const Vec& a, const Vec& b) const {
    if (a.size() != b.size()) throw DomainError("distance arguments differ in dimension");
    if (kind_ == DistanceKind::squared_error) return (a - b).squaredNorm();
    return (fmap_.map(a) - fmap_.map(b)).squaredNorm();
  }

  /// Partial gradients (d/da, d/db).
  std::pair<Vec, Vec> gradients(const Vec& a, const Vec& b) const {
    if (kind_ == DistanceKind::squared_error) {
      Vec ga = 2.0 * (a - b);
      Vec gb = -ga;
      return {std::move(ga), std::move(gb)};
    }
    const Vec r = 2.0 * (fmap_.map(a) - fmap_.map(b));
    return {fmap_.vjp(a, r), fmap_.vjp(b, -r)};
  }

 private:
  DistanceKind kind_ = DistanceKind::squared_error;
  FeatureMap fmap_;
};

}  // namespace minority
