#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace ldpbench {

// Seed derivation and sampling primitives. Everything here is built on
// std::mt19937_64 (whose output sequence is fixed by the standard) plus
// hand-rolled transforms, so streams are reproducible across platforms
// and standard-library versions.

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

inline std::uint64_t hash64(std::string_view s) {
  // FNV-1a over bytes, then one splitmix round to spread low entropy.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return detail::splitmix64(h);
}

inline std::uint64_t mix_seed(std::uint64_t a) { return detail::splitmix64(a); }

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, Rest... rest) {
  return mix_seed(detail::splitmix64(a) ^ (b + 0x9e3779b97f4a7c15ULL), rest...);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

/// Uniform double in [0, 1) with 53 bits of mantissa.
inline double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double in the open interval (0, 1); never returns exactly 0.
inline double uniform_open(Rng& rng) {
  double u;
  do {
    u = uniform_unit(rng);
  } while (u == 0.0);
  return u;
}

/// Uniform integer in [0, n). Rejection sampling, unbiased.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

/// Fisher-Yates shuffle with our own index sampling (std::shuffle is
/// implementation-defined and would break cross-platform determinism).
template <typename T>
void deterministic_shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace ldpbench
