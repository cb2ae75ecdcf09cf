#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "respec/rng.hpp"

using respec::Rng;

TEST_CASE("same seed replays the same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform_int stays inclusive and covers the range") {
  Rng rng(7);
  std::set<int> seen;
  for (int i = 0; i < 2000; ++i) {
    int v = rng.uniform_int(3, 9);
    REQUIRE(v >= 3);
    REQUIRE(v <= 9);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("next_below is unbiased enough for small moduli") {
  Rng rng(123);
  std::vector<int> counts(5, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++counts[rng.next_below(5)];
  for (int c : counts) {
    // 5 sigma of a fair binomial at 20000 expected is about 900.
    CHECK(std::abs(c - draws / 5) < 900);
  }
}

TEST_CASE("gaussian moments match") {
  Rng rng(99);
  const int n = 200000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    double g = rng.gaussian();
    sum += g;
    sq += g * g;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("split streams are independent of parent consumption") {
  Rng parent(5);
  Rng child_before = parent.split("worker");
  parent.next_u64();
  parent.next_u64();
  // split() derives from the state at construction; we snapshot semantics by
  // comparing a child taken from a fresh copy of the same seed.
  Rng parent2(5);
  Rng child_again = parent2.split("worker");
  CHECK(child_before.next_u64() == child_again.next_u64());
}

TEST_CASE("distinct split labels give distinct streams") {
  Rng parent(5);
  Rng a = parent.split("a");
  Rng b = parent.split("b");
  int same = 0;
  for (int i = 0; i < 64; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("uniform01 stays in [0, 1)") {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    double u = rng.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
}

TEST_CASE("shuffle is a permutation and seed-stable") {
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  Rng r1(11);
  respec::shuffle(v, r1);
  std::set<int> s(v.begin(), v.end());
  CHECK(s.size() == 10);

  std::vector<int> w{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  Rng r2(11);
  respec::shuffle(w, r2);
  CHECK(v == w);
}
