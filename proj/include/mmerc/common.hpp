#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmerc {

// Single RNG type used everywhere; all randomness must flow through an
// explicitly seeded instance so runs are reproducible bit for bit.
using Rng = std::mt19937_64;

namespace detail {

template <typename... Args>
std::string msg(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

[[noreturn]] inline void fail(const std::string& what) {
  throw std::invalid_argument(what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(what);
}

// Uniform in [0, 1) from the top 53 bits of the generator output. We avoid
// std::uniform_real_distribution so the draw sequence is pinned by this code
// alone, not by the standard library implementation.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Standard normal via Box-Muller. Stateless: two uniform draws per sample.
inline double normal01(Rng& rng) {
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Unbiased integer in [0, n) by rejection, again implementation-pinned.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  if (n == 0) fail("uniform_below: n must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return v % n;
}

// Inclusive integer range.
inline long uniform_int(Rng& rng, long lo, long hi) {
  if (lo > hi) fail(detail::msg("uniform_int: empty range [", lo, ", ", hi, "]"));
  return lo + static_cast<long>(
                  uniform_below(rng, static_cast<std::uint64_t>(hi - lo) + 1));
}

// Fisher-Yates over 0..n-1 with our own bounded draw.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

// Derives an independent stream from a base seed, so e.g. weight init and
// dropout do not share a draw sequence.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace mmerc
