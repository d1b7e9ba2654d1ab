#pragma once

#include <cstdint>
#include <random>

namespace rfg {

/// Seeded generator. The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard, so integer draws are bit-identical across platforms. Floating-point draws are
/// derived here (not via <random> distributions, which are implementation-defined):
/// uniform() uses the top 53 bits; normal() is Box-Muller and is reproducible wherever
/// std::log/std::sqrt/std::cos round identically (same libm).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// True with probability p.
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent child generator for worker `index` (splitmix64 of seed and index).
  Rng derive(std::uint64_t index) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rfg
