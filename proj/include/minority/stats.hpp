#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "minority/errors.hpp"

namespace minority {

inline double mean(std::span<const double> v) {
  if (v.empty()) throw DomainError("mean of an empty sequence");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double sample_variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

/// Standard error of the mean.
inline double std_error(std::span<const double> v) {
  return v.empty() ? 0.0 : std::sqrt(sample_variance(v) / static_cast<double>(v.size()));
}

/// Linearly interpolated quantile (type 7), q in [0, 1].
inline double quantile(std::span<const double> v, double q) {
  if (v.empty()) throw DomainError("quantile of an empty sequence");
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

/// 1-based ranks with ties replaced by their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("correlation needs sequences of equal length");
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw NumericError("correlation is undefined for a constant sequence");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Spearman rank correlation (Pearson correlation of average ranks).
inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("correlation needs sequences of equal length");
  if (a.size() < 3) throw DomainError("rank correlation needs at least 3 pairs");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson(ra, rb);
}

}  // namespace minority
