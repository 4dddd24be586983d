#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "cbrl/rng.hpp"

using namespace cbrl;

TEST_CASE("substreams are deterministic and distinct") {
  RngStream a = RngStream::substream(42, 7);
  RngStream b = RngStream::substream(42, 7);
  RngStream c = RngStream::substream(42, 8);
  for (int i = 0; i < 100; ++i) {
    uint64_t va = a.next_u64();
    CHECK(va == b.next_u64());
  }
  int same = 0;
  RngStream a2 = RngStream::substream(42, 7);
  for (int i = 0; i < 100; ++i)
    if (a2.next_u64() == c.next_u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("next_double lies in [0,1)") {
  RngStream rng(123);
  for (int i = 0; i < 10000; ++i) {
    double x = rng.next_double();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
}

TEST_CASE("uniform_int respects bounds and hits all values") {
  RngStream rng(9);
  std::set<int64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    int64_t v = rng.uniform_int(-3, 4);
    CHECK(v >= -3);
    CHECK(v <= 4);
    seen.insert(v);
  }
  CHECK(seen.size() == 8);
}

TEST_CASE("bernoulli rate within 3 sigma at p=0.5") {
  RngStream rng = RngStream::substream(1, 99);
  int hits = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i)
    if (rng.bernoulli(0.5)) ++hits;
  double rate = static_cast<double>(hits) / n;
  CHECK(std::abs(rate - 0.5) < 3.0 * std::sqrt(0.25 / n));
}

TEST_CASE("sample_without_replacement draws distinct members") {
  RngStream rng(5);
  auto idx = rng.sample_without_replacement(10, 4);
  CHECK(idx.size() == 4);
  std::set<size_t> s(idx.begin(), idx.end());
  CHECK(s.size() == 4);
  for (size_t i : idx) CHECK(i < 10);

  auto all = rng.sample_without_replacement(3, 7);
  CHECK(all.size() == 3);
}

TEST_CASE("shuffle is deterministic per stream") {
  std::vector<int> v1 = {1, 2, 3, 4, 5, 6};
  std::vector<int> v2 = v1;
  RngStream a = RngStream::substream(11, 3);
  RngStream b = RngStream::substream(11, 3);
  a.shuffle(v1);
  b.shuffle(v2);
  CHECK(v1 == v2);
}

TEST_CASE("fnv1a64 fingerprints differ across content") {
  std::string x = "abc", y = "abd";
  CHECK(fnv1a64(x.data(), x.size()) != fnv1a64(y.data(), y.size()));
}
