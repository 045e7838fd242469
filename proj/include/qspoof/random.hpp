#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace qspoof {

/// Counter-based seed derivation: mixes a master seed with stream indices so
/// that per-trial / per-sensor generators are independent and reproducible
/// across platforms. splitmix64 finalizer.
inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (a + 1) + 0x94d049bb133111ebULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Uniform double in (0, 1]; avoids 0 so log() is safe.
inline double uniform_unit(std::mt19937_64& rng) {
  return (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
}

/// Standard normal draw via Box-Muller. std::normal_distribution is
/// implementation-defined; this keeps sampled streams identical across
/// standard libraries.
inline double standard_normal(std::mt19937_64& rng) {
  const double u1 = uniform_unit(rng);
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace qspoof
