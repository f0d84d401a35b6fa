#pragma once

#include <array>
#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace minority {

using Vec = Eigen::VectorXd;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Splittable random stream.
///
/// Every stream is identified by a 64-bit key derived from the run seed and a
/// path of child ids, so the stream handed to chain `i` depends only on
/// `(seed, i)` and never on the order in which chains execute.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : Rng(detail::splitmix64(seed), Tag{}) {}

  /// Child stream `id`; independent of how many draws the parent has made.
  Rng split(std::uint64_t id) const {
    return Rng(detail::splitmix64(key_ ^ detail::splitmix64(id + 0x632be59bd9b4e019ULL)), Tag{});
  }

  std::uint64_t key() const noexcept { return key_; }

  double normal() { return normal_(engine_); }

  Vec normal_vec(Eigen::Index dim) {
    Vec v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = normal_(engine_);
    return v;
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  struct Tag {};

  Rng(std::uint64_t key, Tag) : key_(key) {
    std::array<std::uint32_t, 4> words{};
    std::uint64_t s = key;
    for (std::size_t i = 0; i < words.size(); i += 2) {
      s = detail::splitmix64(s);
      words[i] = static_cast<std::uint32_t>(s);
      words[i + 1] = static_cast<std::uint32_t>(s >> 32);
    }
    std::seed_seq seq(words.begin(), words.end());
    engine_.seed(seq);
  }

  std::uint64_t key_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace minority
