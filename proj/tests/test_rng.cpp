#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "unirep/rng.hpp"

using namespace unirep;

TEST_CASE("same seed reproduces the byte stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("named streams are independent of each other") {
  Rng a = Rng::stream(7, "alpha");
  Rng b = Rng::stream(7, "beta");
  Rng a2 = Rng::stream(7, "alpha");
  bool all_equal = true;
  for (int i = 0; i < 20; ++i) {
    std::uint64_t va = a.next_u64();
    if (va != b.next_u64()) all_equal = false;
    CHECK(va == a2.next_u64());
  }
  CHECK_FALSE(all_equal);
}

TEST_CASE("uniform and normal stay in sane ranges") {
  Rng rng(3);
  double sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += rng.normal();
  }
  CHECK(std::abs(sum / 10000.0) < 0.05);
}

TEST_CASE("below covers the whole range") {
  Rng rng(11);
  std::set<std::size_t> seen;
  for (int i = 0; i < 1000; ++i) {
    std::size_t v = rng.below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
  CHECK(rng.range_inclusive(3, 3) == 3);
}

TEST_CASE("pick returns distinct values") {
  Rng rng(5);
  auto picked = rng.pick(10, 4);
  CHECK(picked.size() == 4);
  std::set<std::size_t> s(picked.begin(), picked.end());
  CHECK(s.size() == 4);
  for (auto v : picked) CHECK(v < 10);
}

TEST_CASE("shuffle permutes") {
  Rng rng(9);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  auto orig = v;
  rng.shuffle(v);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == orig);
}
