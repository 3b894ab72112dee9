#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace ccn {

/*
 * std::mt19937_64 is bit-specified by the standard, but the std
 * distributions are not. These draws are derived directly from the raw
 * 64-bit output so seeded streams are identical across standard libraries.
 */
class Rng
{
public:
  explicit Rng(std::uint64_t seed)
    : engine_(seed)
  {
  }

  auto bits() -> std::uint64_t { return engine_(); }

  // [0, 1)
  auto uniform() -> double { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  auto uniform(double lo, double hi) -> double { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  auto below(std::uint64_t n) -> std::uint64_t
  {
    std::uint64_t const limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t       x = 0;
    do { x = engine_(); } while (x >= limit);
    return x % n;
  }

  // Box-Muller; one of the pair is discarded.
  auto normal() -> double
  {
    double u1 = 0.0;
    do { u1 = uniform(); } while (u1 <= 0.0);
    double const u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

private:
  std::mt19937_64 engine_;
};

// Mixes several integers into one seed (splitmix64 finalizer).
inline auto mix_seed(std::uint64_t a, std::uint64_t b) -> std::uint64_t
{
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

} // namespace ccn
