#pragma once

#include <cstdint>
#include <random>

namespace gpmpc {

/// Seeded random stream. Gaussian draws go through an explicit
/// Box-Muller transform instead of std::normal_distribution so that a
/// given seed yields the same sequence on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform();

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);

  /// Standard normal draw.
  double gaussian();

  /// Derive an independent sub-stream; deterministic in (seed, stream).
  Rng split(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace gpmpc
