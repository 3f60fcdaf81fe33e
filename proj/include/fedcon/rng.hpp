#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedcon {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for the stream identified by (master, tag, ids...). Distinct tuples give
/// statistically independent streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix64(master);
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p + 0x51ed270b27ULL));
  return h;
}

namespace stream {
// Tags naming the purpose of a derived stream.
inline constexpr std::uint64_t split = 1;
inline constexpr std::uint64_t init = 2;
inline constexpr std::uint64_t server = 3;
inline constexpr std::uint64_t client = 4;
inline constexpr std::uint64_t selection = 5;
inline constexpr std::uint64_t projector = 6;
inline constexpr std::uint64_t batches = 7;
}  // namespace stream

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> parts) {
  return Rng(derive_seed(master, parts));
}

/// Uniform integer in [0, n) without relying on distribution internals.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  // Lemire-style rejection keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Uniform real in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = uniform_index(rng, i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace fedcon
