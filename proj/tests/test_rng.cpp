#include <doctest.h>

#include <random>

#include "cbmauc/rng.hpp"

using namespace cbmauc;

TEST_CASE("uniform_int stays in range and covers values") {
  Rng rng(1);
  std::vector<int> seen(7, 0);
  for (int i = 0; i < 2000; ++i) {
    uint64_t v = rng.uniform_int(7);
    REQUIRE(v < 7);
    ++seen[static_cast<size_t>(v)];
  }
  for (int c : seen) CHECK(c > 150);
}

TEST_CASE("normal draws have sane moments") {
  Rng rng(2);
  double sum = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(std::fabs(mean) < 0.03);
  CHECK(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("shuffle is deterministic per seed") {
  std::vector<int64_t> a{0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<int64_t> b = a;
  Rng r1(42), r2(42);
  r1.shuffle(a);
  r2.shuffle(b);
  CHECK(a == b);
  Rng r3(43);
  std::vector<int64_t> c{0, 1, 2, 3, 4, 5, 6, 7};
  r3.shuffle(c);
  CHECK(a != c);
}

namespace {

// Independent reimplementation of the documented sampler: Fisher-Yates with
// rejection-sampled uniform indices on a raw mt19937_64, then reject
// permutations with fixed points.
std::vector<int64_t> reference_derangement(uint64_t seed, int64_t n) {
  std::mt19937_64 eng(seed);
  auto uniform_int = [&](uint64_t m) {
    uint64_t limit = UINT64_MAX - UINT64_MAX % m;
    uint64_t x;
    do {
      x = eng();
    } while (x >= limit);
    return x % m;
  };
  while (true) {
    std::vector<int64_t> p(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
    for (size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[uniform_int(i)]);
    bool ok = true;
    for (int64_t i = 0; i < n; ++i)
      if (p[static_cast<size_t>(i)] == i) ok = false;
    if (ok) return p;
  }
}

}  // namespace

TEST_CASE("derangement matches the reference sampler and has no fixed points") {
  SUBCASE("B=2 is the forced swap") {
    Rng rng(0);
    std::vector<int64_t> d = rng.derangement(2);
    CHECK(d[0] == 1);
    CHECK(d[1] == 0);
  }
  SUBCASE("no fixed points for many draws") {
    Rng rng(5);
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<int64_t> d = rng.derangement(6);
      for (int64_t i = 0; i < 6; ++i) CHECK(d[static_cast<size_t>(i)] != i);
    }
  }
  SUBCASE("B=4 fixed seed equals an independent reimplementation") {
    for (uint64_t seed : {1ull, 7ull, 99ull}) {
      Rng rng(seed);
      CHECK(rng.derangement(4) == reference_derangement(seed, 4));
    }
  }
  SUBCASE("n < 2 rejected") {
    Rng rng(1);
    CHECK_THROWS(rng.derangement(1));
  }
}
