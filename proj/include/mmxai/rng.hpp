#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace mmxai {

/// SplitMix64 step; used for seed mixing and generator seeding.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derives an independent seed for a named sub-stream of a run seed.
/// Streams with different tags never collide in practice, which keeps
/// e.g. the per-stage training RNGs independent of stage order.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream_tag);

/// Deterministic xoshiro256** generator. The standard library engines are
/// deterministic too, but the distributions are not pinned by the standard;
/// everything here is specified bit-for-bit so seeded runs reproduce exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller (second draw cached).
  double normal();

  bool bernoulli(double p);

  /// Unbiased integer in [0, n); n must be positive.
  std::size_t index(std::size_t n);

  /// Fisher-Yates shuffle with a fixed visit order.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = index(i + 1);
      std::swap(v[i], v[j]);
    }
  }

  /// Independent generator for the given sub-stream of this Rng's seed.
  Rng derive(std::uint64_t stream_tag) const;

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mmxai
