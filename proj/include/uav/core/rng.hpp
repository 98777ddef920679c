#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace uav {

/// Counter-based generator: output k is splitmix64(seed, k). Identical seed and
/// call sequence give identical values on every platform, and independent
/// streams are derived with fork() instead of sharing one sequence.
class RngState {
 public:
  constexpr explicit RngState(std::uint64_t seed = 0, std::uint64_t counter = 0) noexcept
      : seed_(seed), counter_(counter) {}

  [[nodiscard]] constexpr std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] constexpr std::uint64_t counter() const noexcept { return counter_; }

  constexpr std::uint64_t next_u64() noexcept { return mix(seed_ + 0x9E3779B97F4A7C15ULL * ++counter_); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound) noexcept {
    // Rejection keeps the draw unbiased.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % bound;
  }

  /// Standard normal via Box-Muller (one value per call).
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Independent child stream keyed by `stream`; does not advance this state.
  [[nodiscard]] constexpr RngState fork(std::uint64_t stream) const noexcept {
    return RngState(mix(seed_ ^ mix(stream + 0xD1B54A32D192ED03ULL)), 0);
  }

 private:
  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t counter_;
};

/// Fisher-Yates with RngState; std::shuffle is not portable across libraries.
template <typename Range>
void shuffle(Range& range, RngState& rng) {
  using std::size;
  const auto n = static_cast<std::uint64_t>(size(range));
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = rng.below(i);
    using std::swap;
    swap(range[i - 1], range[j]);
  }
}

}  // namespace uav
