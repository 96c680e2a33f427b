#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace mot {

// FNV-1a 64-bit. Used both for seed derivation and for artifact checksums,
// so the constants here are load-bearing for stored digests.
inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ull;

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvOffset) {
  return fnv1a(s.data(), s.size(), h);
}

// String literals must hash as text, never bind to the (data, n) overload
// with the chained digest mistaken for a byte count.
inline std::uint64_t fnv1a(const char* s, std::uint64_t h = kFnvOffset) {
  return fnv1a(std::string_view(s), h);
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic child-seed derivation: hash the parent seed with a tag and
// any number of integer discriminators. Collisions between unrelated streams
// would silently correlate runs, so every call site uses a distinct tag.
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag) {
  std::uint64_t h = kFnvOffset;
  h = fnv1a(&parent, sizeof(parent), h);
  h = fnv1a(tag, h);
  std::uint64_t s = h;
  return splitmix64(s);
}

template <class... Ints>
std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag, Ints... parts) {
  std::uint64_t h = kFnvOffset;
  h = fnv1a(&parent, sizeof(parent), h);
  h = fnv1a(tag, h);
  auto mix_int = [&h](std::uint64_t v) { h = fnv1a(&v, sizeof(v), h); };
  (mix_int(static_cast<std::uint64_t>(parts)), ...);
  std::uint64_t s = h;
  return splitmix64(s);
}

// Small deterministic generator (splitmix64 core). Not cryptographic; chosen
// for a fixed cross-platform stream and cheap value-based copies.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0, n) via rejection (Lemire's method).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      std::uint64_t threshold = (0 - n) % n;
      while (lo < threshold) {
        m = static_cast<__uint128_t>(next_u64()) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Uniform integer in [lo, hi] inclusive.
  long long range(long long lo, long long hi) {
    return lo + static_cast<long long>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  // Standard normal via Box-Muller (one value per call; no cached spare, so
  // the stream position is a simple function of the call count).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log1p(-u1));
    return r * std::cos(6.283185307179586477 * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Identity permutation of n elements, shuffled in place.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

 private:
  std::uint64_t state_;
};

}  // namespace mot
