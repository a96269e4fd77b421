#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace boulevard {

// All randomness flows through std::mt19937_64 (whose output sequence is
// fixed by the standard) plus the hand-rolled draws below, so a seed pins
// every result bit-for-bit. Standard-library distributions are avoided
// because their algorithms are implementation-defined.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter scheme for replicate/worker streams: stream k of a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t counter) {
  return splitmix64(master ^ splitmix64(counter + 1));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
  return std::mt19937_64(splitmix64(seed));
}

// Uniform double in [0, 1), 53-bit resolution.
inline double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform_real(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * uniform01(g);
}

// Unbiased integer in [0, n).
inline std::uint64_t uniform_below(std::mt19937_64& g, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = g();
  while (x >= limit) x = g();
  return x % n;
}

// Box-Muller; stateless, two engine draws per variate.
inline double normal01(std::mt19937_64& g) {
  const double u1 = (static_cast<double>(g() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// k distinct indices from {0..n-1}, ascending. Partial Fisher-Yates on a
// caller-visible scratch-free identity permutation.
inline std::vector<int> sample_without_replacement(std::mt19937_64& g, int n, int k) {
  std::vector<int> pool(n);
  for (int i = 0; i < n; ++i) pool[i] = i;
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(uniform_below(g, static_cast<std::uint64_t>(n - i)));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace boulevard
