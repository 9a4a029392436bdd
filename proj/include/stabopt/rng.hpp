#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace stabopt {

// std::mt19937_64 gives a portable bit stream; the standard distributions do
// not, so every mapping from bits to values lives here.
using RandomEngine = std::mt19937_64;

// splitmix64 finalizer, used to derive independent seeds from a base seed
// plus structural counters (threshold index, iteration, purpose tag).
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  return mix64(base ^ mix64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t k) {
  return mix64(derive_seed(base, tag) ^ mix64(k + 0x51ed2701ULL));
}

// FNV-1a so textual purpose tags hash identically across platforms.
inline std::uint64_t tag_hash(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  return derive_seed(base, tag_hash(tag));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t k) {
  return derive_seed(base, tag_hash(tag), k);
}

// Uniform in [0, 1) with 53 random bits.
inline double uniform01(RandomEngine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(RandomEngine& eng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(eng);
}

// Unbiased integer in [0, n) via rejection.
inline std::uint64_t uniform_index(RandomEngine& eng, std::uint64_t n) {
  if (n <= 1) return 0;
  std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = eng();
  } while (v >= limit);
  return v % n;
}

// Signed integer in [lo, hi], inclusive.
inline std::int64_t uniform_int(RandomEngine& eng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(uniform_index(eng, static_cast<std::uint64_t>(hi - lo + 1)));
}

template <typename T>
void shuffle_vector(RandomEngine& eng, std::vector<T>& v) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_index(eng, i));
    std::swap(v[i - 1], v[j]);
  }
}

// k points in [0,1)^dim, one per stratum along each axis.
inline std::vector<std::vector<double>> latin_hypercube(RandomEngine& eng, std::size_t k, std::size_t dim) {
  std::vector<std::vector<double>> pts(k, std::vector<double>(dim, 0.0));
  for (std::size_t d = 0; d < dim; ++d) {
    std::vector<std::size_t> strata(k);
    for (std::size_t i = 0; i < k; ++i) strata[i] = i;
    shuffle_vector(eng, strata);
    for (std::size_t i = 0; i < k; ++i)
      pts[i][d] = (static_cast<double>(strata[i]) + uniform01(eng)) / static_cast<double>(k);
  }
  return pts;
}

}  // namespace stabopt
