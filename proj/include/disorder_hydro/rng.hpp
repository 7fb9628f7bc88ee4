#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace disorder_hydro {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Order-sensitive hash of a key tuple. Used to derive counter-based streams
/// and per-site field draws, so a value depends only on (seed, key) and never
/// on how many other values were drawn before it.
inline std::uint64_t hash_key(std::uint64_t seed,
                              std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = mix64(seed ^ 0x6a09e667f3bcc909ULL);
  for (auto p : parts) h = mix64(h ^ mix64(p + 0x3c6ef372fe94f82bULL));
  return h;
}

constexpr double u64_to_unit(std::uint64_t u) noexcept {
  return static_cast<double>(u >> 11) * 0x1.0p-53;  // [0,1)
}

/// Counter-based splittable stream. Satisfies UniformRandomBitGenerator, but
/// the simulation code only uses the member samplers so that results do not
/// depend on the standard library's distribution implementations.
class rng {
 public:
  using result_type = std::uint64_t;

  explicit rng(std::uint64_t seed = 0) noexcept : key_(mix64(seed)), counter_(0) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept { return mix64(key_ + (counter_++) * 0x9e3779b97f4a7c15ULL); }

  /// Independent child stream identified by `id`.
  rng split(std::uint64_t id) const noexcept {
    rng child;
    child.key_ = hash_key(key_, {id});
    return child;
  }

  double uniform() noexcept { return u64_to_unit((*this)()); }

  /// Uniform on (0,1].
  double uniform_pos() noexcept { return 1.0 - uniform(); }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  double exponential(double rate) noexcept { return -std::log(uniform_pos()) / rate; }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const __uint128_t m = static_cast<__uint128_t>((*this)()) * n;
      if (static_cast<std::uint64_t>(m) >= threshold)
        return static_cast<std::uint64_t>(m >> 64);
    }
  }

  double normal() noexcept {
    // Box-Muller, one variate per call.
    const double u = uniform_pos();
    const double v = uniform();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * M_PI * v);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace disorder_hydro
