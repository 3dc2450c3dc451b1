#pragma once

#include <cstdint>
#include <vector>

namespace magup {

// Counter-based SplitMix64: draw i is mix(seed + (i + 1) * 0x9E3779B97F4A7C15).
// The integer stream and the uniform doubles derived from it are identical
// on every platform; normal() goes through libm log/cos.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller (consumes two draws).
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Independent stream keyed by `stream`.
  Rng fork(std::uint64_t stream) const;

  std::vector<double> uniform_vector(std::size_t n, double lo, double hi);
  std::vector<double> normal_vector(std::size_t n, double stddev);

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

}  // namespace magup
