#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "mot/rng.hpp"

using namespace mot;

TEST_CASE("fnv1a matches independently computed reference digests") {
  // Hand-rolled FNV-1a over the published offset basis / prime:
  //   h = 14695981039346656037; for each byte: h ^= b; h *= 1099511628211 (mod 2^64).
  // "a": h = (14695981039346656037 ^ 97) * 1099511628211 mod 2^64
  CHECK(fnv1a("") == 14695981039346656037ull);
  CHECK(fnv1a("a") == 12638187200555641996ull);
  CHECK(fnv1a("foobar") == 9625390261332436968ull);
}

TEST_CASE("fnv1a chains: digest of concatenation equals chained digest") {
  std::uint64_t h1 = fnv1a("hello world");
  std::uint64_t h2 = fnv1a(" world", fnv1a("hello"));
  CHECK(h1 == h2);
}

TEST_CASE("splitmix64 matches the reference stream from seed 1234567") {
  // Reference values from the published splitmix64 test vector (seed 1234567).
  std::uint64_t s = 1234567;
  CHECK(splitmix64(s) == 6457827717110365317ull);
  CHECK(splitmix64(s) == 3203168211198807973ull);
  CHECK(splitmix64(s) == 9817491932198370423ull);
  CHECK(splitmix64(s) == 4593380528125082431ull);
  CHECK(splitmix64(s) == 16408922859458223821ull);
}

TEST_CASE("derive_seed is deterministic and tag/part sensitive") {
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));
  CHECK(derive_seed(1, "a", 0, 0) != derive_seed(1, "a", 0, 1));
  // Adding a discriminator changes the stream even when it is zero.
  CHECK(derive_seed(1, "a") != derive_seed(1, "a", 0));
}

TEST_CASE("derive_seed children are distinct across a large fan-out") {
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 10000; ++i) seen.insert(derive_seed(42, "child", i));
  CHECK(seen.size() == 10000);
}

TEST_CASE("uniform lies in [0,1) and has roughly the right mean") {
  Rng rng(99);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  // Mean of n uniforms: sd = 1/sqrt(12n) ~ 0.00091; allow 5 sigma.
  CHECK(std::abs(sum / n - 0.5) < 0.005);
}

TEST_CASE("below is unbiased over a non-power-of-two range") {
  Rng rng(7);
  const std::uint64_t n = 6;
  const int draws = 60000;
  std::vector<int> counts(n, 0);
  for (int i = 0; i < draws; ++i) {
    std::uint64_t v = rng.below(n);
    REQUIRE(v < n);
    ++counts[static_cast<std::size_t>(v)];
  }
  // Expected 10000 per bucket, sd ~ sqrt(10000*5/6) ~ 91; allow 5 sigma.
  for (int c : counts) CHECK(std::abs(c - 10000) < 460);
}

TEST_CASE("range covers both endpoints") {
  Rng rng(3);
  bool lo_seen = false, hi_seen = false;
  for (int i = 0; i < 1000; ++i) {
    long long v = rng.range(-2, 2);
    REQUIRE(v >= -2);
    REQUIRE(v <= 2);
    if (v == -2) lo_seen = true;
    if (v == 2) hi_seen = true;
  }
  CHECK(lo_seen);
  CHECK(hi_seen);
}

TEST_CASE("normal has approximately zero mean and unit variance") {
  Rng rng(11);
  const int n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    sum += z;
    sumsq += z * z;
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);       // sd of mean ~ 0.0032; 6 sigma
  CHECK(std::abs(var - 1.0) < 0.03);  // sd of var ~ 0.0045; 6+ sigma
}

TEST_CASE("normal values are finite even at stream extremes") {
  Rng rng(1);
  for (int i = 0; i < 100000; ++i) {
    double z = rng.normal();
    REQUIRE(std::isfinite(z));
  }
}

TEST_CASE("permutation is a bijection and shuffles uniformly enough") {
  Rng rng(21);
  auto p = rng.permutation(10);
  std::set<std::size_t> unique(p.begin(), p.end());
  CHECK(unique.size() == 10);

  // Position of element 0 over many draws should hit all slots.
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 24000; ++i) {
    auto q = rng.permutation(4);
    for (std::size_t j = 0; j < 4; ++j) {
      if (q[j] == 0) ++counts[j];
    }
  }
  for (int c : counts) CHECK(std::abs(c - 6000) < 400);  // sd ~ 67
}

TEST_CASE("identical seeds give identical streams; different seeds diverge") {
  Rng a(5), b(5), c(6);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 64; ++i) {
    std::uint64_t va = a.next_u64(), vb = b.next_u64(), vc = c.next_u64();
    all_equal = all_equal && (va == vb);
    any_diff = any_diff || (va != vc);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}
