#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "minority/rng.hpp"

// Direct O(N^2 log N) evaluation of AvgkNN and LOF from their definitions.
namespace brute {

using minority::Vec;

inline std::vector<std::pair<double, std::size_t>> knn(const Vec& q, const std::vector<Vec>& ref, int k,
                                                       std::optional<std::size_t> self) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (self && *self == i) continue;
    all.emplace_back((ref[i] - q).norm(), i);
  }
  std::sort(all.begin(), all.end());
  all.resize(static_cast<std::size_t>(k));
  return all;
}

inline double avg_knn(const Vec& q, const std::vector<Vec>& ref, int k, std::optional<std::size_t> self) {
  double s = 0.0;
  for (const auto& [d, i] : knn(q, ref, k, self)) s += d;
  return s / k;
}

inline double lof(const Vec& q, const std::vector<Vec>& ref, int k, std::optional<std::size_t> self) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> kdist(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) kdist[i] = knn(ref[i], ref, k, i).back().first;
  auto lrd = [&](const Vec& p, std::optional<std::size_t> own) {
    double reach = 0.0;
    for (const auto& [d, i] : knn(p, ref, k, own)) reach += std::max(kdist[i], d);
    return reach > 0.0 ? k / reach : inf;
  };
  const double lq = lrd(q, self);
  if (lq == inf) return 1.0;
  double s = 0.0;
  for (const auto& [d, i] : knn(q, ref, k, self)) {
    const double li = lrd(ref[i], i);
    if (li == inf) return inf;
    s += li;
  }
  return (s / k) / lq;
}

}  // namespace brute
