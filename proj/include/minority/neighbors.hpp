#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <utility>
#include <vector>

#include "minority/errors.hpp"
#include "minority/rng.hpp"

namespace minority {

/// Neighborhood-density metrics against a fixed reference set.
///
/// Neighbors are ordered by (Euclidean distance, reference index), so ties are
/// resolved deterministically. A query that is itself a member of the
/// reference set passes its index as `self` to exclude it.
///
/// LOF uses exactly k neighbors, reach_k(a, b) = max(kdist(b), |a - b|) and
/// lrd(a) = 1 / mean_b reach_k(a, b). When the mean reachability of a point
/// is zero (duplicates) its lrd is infinite; a query with infinite lrd has
/// LOF = 1, and a finite-lrd query next to infinite-lrd neighbors has LOF = +inf.
class NeighborIndex {
 public:
  using Neighbor = std::pair<double, std::size_t>;

  NeighborIndex(std::vector<Vec> refset, int k) : ref_(std::move(refset)), k_(k) {
    if (k_ < 1) throw DomainError("neighbor count k must be >= 1");
    if (ref_.size() < static_cast<std::size_t>(k_)) throw DomainError("reference set needs at least k points");
  }

  int k() const noexcept { return k_; }
  std::size_t size() const noexcept { return ref_.size(); }
  const std::vector<Vec>& points() const noexcept { return ref_; }

  /// The k nearest reference points to `query`, nearest first.
  std::vector<Neighbor> nearest(const Vec& query, std::optional<std::size_t> self = std::nullopt) const {
    const std::size_t available = ref_.size() - (self && *self < ref_.size() ? 1 : 0);
    if (available < static_cast<std::size_t>(k_)) throw DomainError("not enough neighbors after self-exclusion");
    std::vector<Neighbor> all;
    all.reserve(ref_.size());
    for (std::size_t i = 0; i < ref_.size(); ++i) {
      if (self && *self == i) continue;
      all.emplace_back((ref_[i] - query).norm(), i);
    }
    std::partial_sort(all.begin(), all.begin() + k_, all.end());
    all.resize(static_cast<std::size_t>(k_));
    return all;
  }

  /// Mean distance to the k nearest neighbors.
  double avg_knn(const Vec& query, std::optional<std::size_t> self = std::nullopt) const {
    const auto nn = nearest(query, self);
    double sum = 0.0;
    for (const auto& [d, i] : nn) sum += d;
    return sum / k_;
  }

  double lof(const Vec& query, std::optional<std::size_t> self = std::nullopt) const {
    ensure_reference_densities();
    const auto nn = nearest(query, self);
    const double q_lrd = lrd_from(nn);
    if (q_lrd == kInf) return 1.0;
    double sum = 0.0;
    for (const auto& [d, i] : nn) {
      if (lrd_[i] == kInf) return kInf;
      sum += lrd_[i];
    }
    return (sum / k_) / q_lrd;
  }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  double lrd_from(const std::vector<Neighbor>& nn) const {
    double reach = 0.0;
    for (const auto& [d, i] : nn) reach += std::max(kdist_[i], d);
    return reach > 0.0 ? static_cast<double>(k_) / reach : kInf;
  }

  void ensure_reference_densities() const {
    std::call_once(*densities_once_, [this] { compute_reference_densities(); });
  }

  void compute_reference_densities() const {
    const std::size_t n = ref_.size();
    std::vector<std::vector<Neighbor>> nn(n);
    kdist_.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      nn[i] = nearest(ref_[i], i);
      kdist_[i] = nn[i].back().first;
    }
    std::vector<double> lrd(n);
    for (std::size_t i = 0; i < n; ++i) lrd[i] = lrd_from(nn[i]);
    lrd_ = std::move(lrd);
  }

  std::vector<Vec> ref_;
  int k_;
  // Filled once, on the first LOF query.
  std::unique_ptr<std::once_flag> densities_once_ = std::make_unique<std::once_flag>();
  mutable std::vector<double> kdist_;
  mutable std::vector<double> lrd_;
};

inline double avg_knn(const Vec& query, const std::vector<Vec>& refset, int k,
                      std::optional<std::size_t> self = std::nullopt) {
  return NeighborIndex(refset, k).avg_knn(query, self);
}

inline double lof(const Vec& query, const std::vector<Vec>& refset, int k,
                  std::optional<std::size_t> self = std::nullopt) {
  return NeighborIndex(refset, k).lof(query, self);
}

}  // namespace minority
