// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace gde {

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

constexpr std::uint64_t kXxPrime1 = 0x9e3779b185ebca87ULL;
constexpr std::uint64_t kXxPrime2 = 0xc2b2ae3d27d4eb4fULL;
constexpr std::uint64_t kXxPrime3 = 0x165667b19e3779f9ULL;
constexpr std::uint64_t kXxPrime4 = 0x85ebca77c2b2ae63ULL;
constexpr std::uint64_t kXxPrime5 = 0x27d4eb2f165667c5ULL;

constexpr std::uint64_t rotl64(std::uint64_t x, int r) { return (x << r) | (x >> (64 - r)); }

constexpr std::uint64_t read_le(std::string_view s, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + i]);
  return v;
}

constexpr std::uint64_t xx_round(std::uint64_t acc, std::uint64_t lane) {
  acc += lane * kXxPrime2;
  acc = rotl64(acc, 31);
  return acc * kXxPrime1;
}

constexpr std::uint64_t xx_merge(std::uint64_t acc, std::uint64_t v) {
  acc ^= xx_round(0, v);
  return acc * kXxPrime1 + kXxPrime4;
}

}  // namespace detail

/// XXH64. Used for token ids; stable across platforms.
constexpr std::uint64_t xxh64(std::string_view s, std::uint64_t seed = 0) {
  using namespace detail;
  const std::size_t n = s.size();
  std::size_t p = 0;
  std::uint64_t h = 0;
  if (n >= 32) {
    std::uint64_t v1 = seed + kXxPrime1 + kXxPrime2;
    std::uint64_t v2 = seed + kXxPrime2;
    std::uint64_t v3 = seed;
    std::uint64_t v4 = seed - kXxPrime1;
    for (; p + 32 <= n; p += 32) {
      v1 = xx_round(v1, read_le(s, p, 8));
      v2 = xx_round(v2, read_le(s, p + 8, 8));
      v3 = xx_round(v3, read_le(s, p + 16, 8));
      v4 = xx_round(v4, read_le(s, p + 24, 8));
    }
    h = rotl64(v1, 1) + rotl64(v2, 7) + rotl64(v3, 12) + rotl64(v4, 18);
    h = xx_merge(h, v1);
    h = xx_merge(h, v2);
    h = xx_merge(h, v3);
    h = xx_merge(h, v4);
  } else {
    h = seed + kXxPrime5;
  }
  h += n;
  for (; p + 8 <= n; p += 8) {
    h ^= xx_round(0, read_le(s, p, 8));
    h = rotl64(h, 27) * kXxPrime1 + kXxPrime4;
  }
  if (p + 4 <= n) {
    h ^= read_le(s, p, 4) * kXxPrime1;
    h = rotl64(h, 23) * kXxPrime2 + kXxPrime3;
    p += 4;
  }
  for (; p < n; ++p) {
    h ^= static_cast<unsigned char>(s[p]) * kXxPrime5;
    h = rotl64(h, 11) * kXxPrime1;
  }
  h ^= h >> 33;
  h *= kXxPrime2;
  h ^= h >> 29;
  h *= kXxPrime3;
  h ^= h >> 32;
  return h;
}

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based stream: the i-th 64-bit draw for `key`. Any draw can be
/// computed without generating the ones before it.
constexpr std::uint64_t counter_draw(std::uint64_t key, std::uint64_t i) {
  return mix64(key + (i + 1) * 0x9e3779b97f4a7c15ULL);
}

/// Uniform double in [0, 1) from the top 53 bits of a draw.
constexpr double unit_interval(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace gde
