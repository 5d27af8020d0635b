#pragma once

#include <array>
#include <cstdint>

namespace mtkd {

// xoshiro256** seeded through splitmix64. Every distribution below is
// implemented here rather than taken from <random>, whose distributions are
// not specified bit-for-bit across standard libraries.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;

  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n) noexcept;

  // Standard normal via Box-Muller; the second variate is cached.
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  // Marsaglia-Tsang for shape >= 1, boosted for shape < 1.
  double gamma(double shape) noexcept;
  double beta(double a, double b) noexcept;

  // Independent stream keyed by (seed, tag); does not advance this generator.
  SeededRng derive(std::uint64_t tag) const noexcept;

  bool operator==(const SeededRng&) const = default;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

}  // namespace mtkd
