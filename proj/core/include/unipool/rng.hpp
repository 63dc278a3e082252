#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace unipool {

/// Deterministic random generator (xoshiro256**, splitmix64-seeded).
/// The stream is fully specified by this code, so results are reproducible
/// across standard libraries and platforms. State is serializable for
/// checkpointing.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller (one value per draw, no cached state).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t index(std::uint64_t n);

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::uint32_t> permutation(std::size_t n);

  std::array<std::uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

  /// Derives an independent seed from a base seed and a stream id.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace unipool
