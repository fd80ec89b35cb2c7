#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <random>
#include <string_view>

namespace exrank {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Content hash of a parameter vector (exact bit patterns).
inline std::uint64_t params_fingerprint(std::span<const double> params) {
  std::uint64_t h = splitmix64(params.size());
  for (double p : params) h = splitmix64(h ^ std::bit_cast<std::uint64_t>(p));
  return h;
}

/// Named sub-stream of a root seed. Each consumer (data, subset, batch,
/// positive, negative, ...) draws from its own stream, so the number of
/// draws made by one stage never shifts another stage's sequence.
inline Rng stream(std::uint64_t root, std::string_view name, std::uint64_t index = 0) {
  std::uint64_t s = splitmix64(root);
  s = splitmix64(s ^ fnv1a(name));
  s = splitmix64(s ^ index);
  return Rng(s);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

}  // namespace exrank
