#pragma once

#include <cstdint>
#include <random>

namespace amarl {

/// Deterministic random source. Every sampling routine in the library takes
/// one of these explicitly; nothing reads hidden global state, so a run is
/// reproducible from the seed alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0, 1).
  double uniform() { return (engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n), n > 0. Rejection sampling, no modulo bias.
  std::uint32_t below(std::uint32_t n) {
    const std::uint64_t span = 0x100000000ull - (0x100000000ull % n);
    for (;;) {
      const std::uint64_t x = engine_() >> 32;
      if (x < span) return static_cast<std::uint32_t>(x % n);
    }
  }

  std::uint64_t raw() { return engine_(); }

  /// Stable sub-stream derivation, used to give each episode or worker its
  /// own generator so results do not depend on scheduling order.
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace amarl
