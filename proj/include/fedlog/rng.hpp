#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace fedlog {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Derives independent, reproducible RNG streams from one root seed.
///
/// Every consumer asks for a stream by name plus up to two integer keys
/// (typically round and client id), so the numbers drawn never depend on the
/// order in which streams are created or on which thread creates them.
class SeedSequence {
 public:
  explicit SeedSequence(std::uint64_t root) : root_(root) {}

  std::uint64_t root() const { return root_; }

  std::uint64_t derive(std::string_view name, std::uint64_t a = 0,
                       std::uint64_t b = 0) const {
    std::uint64_t h = detail::splitmix64(root_ ^ detail::fnv1a(name));
    h = detail::splitmix64(h ^ (a * 0x9e3779b97f4a7c15ULL));
    h = detail::splitmix64(h ^ (b * 0xc2b2ae3d27d4eb4fULL));
    return h;
  }

  Rng stream(std::string_view name, std::uint64_t a = 0,
             std::uint64_t b = 0) const {
    return Rng(derive(name, a, b));
  }

 private:
  std::uint64_t root_;
};

/// Uniform double in [0, 1) built from the raw 64-bit output, so the sequence
/// does not depend on the standard library's distribution implementation.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller on uniform01.
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
}

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace fedlog
