#pragma once

#include <array>
#include <cstdint>
#include <optional>

namespace mixsgd {

/// xoshiro256** (Blackman & Vigna) seeded through splitmix64.
///
/// All randomness in the library flows through this generator so that a seed
/// reproduces a run bit-for-bit on any platform; no std:: distributions are
/// used because their algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform01();
  /// Uniform integer in [0, n) by rejection (unbiased). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Standard normal by the Box-Muller transform; the second variate is cached.
  double normal();
  /// True with probability p. p >= 1 returns true without consuming state.
  bool bernoulli(double p);

  /// Derives an independent stream, e.g. one per trial.
  static std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

 private:
  std::array<std::uint64_t, 4> s_{};
  std::optional<double> cached_normal_;
};

}  // namespace mixsgd
