#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "cbrl/errors.hpp"
#include "cbrl/schedule.hpp"

using namespace cbrl;

TEST_CASE("schedule endpoints are exact") {
  ScheduleParams p{0.5, 0.0, 500};
  CHECK(injection_probability(1, p) == 0.5);
  CHECK(injection_probability(500, p) == 0.0);
  ScheduleParams q{0.3, 0.9, 17};
  CHECK(injection_probability(1, q) == 0.3);
  CHECK(injection_probability(17, q) == 0.9);
}

TEST_CASE("midpoint matches the closed form") {
  ScheduleParams p{0.5, 0.0, 500};
  // p(250) = 0.5 * (1 - 249/499) = 125/499
  CHECK(injection_probability(250, p) == doctest::Approx(125.0 / 499.0).epsilon(1e-12));
  CHECK(injection_probability(250, p) == doctest::Approx(0.25050).epsilon(1e-4));
}

TEST_CASE("T=1 returns p_start") {
  ScheduleParams p{0.7, 0.1, 1};
  CHECK(injection_probability(1, p) == 0.7);
}

TEST_CASE("out-of-range steps and invalid params throw") {
  ScheduleParams p{0.5, 0.0, 10};
  CHECK_THROWS_AS(injection_probability(0, p), RunError);
  CHECK_THROWS_AS(injection_probability(11, p), RunError);
  ScheduleParams bad{1.5, 0.0, 10};
  CHECK_THROWS_AS(injection_probability(1, bad), ConfigError);
  ScheduleParams bad2{0.5, 0.0, 0};
  CHECK_THROWS_AS(bad2.validate(), ConfigError);
}

TEST_CASE("monotone non-increasing when p_end <= p_start, spanning the range") {
  RngStream rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    double hi = rng.next_double();
    double lo = rng.next_double() * hi;
    int T = static_cast<int>(rng.uniform_int(2, 400));
    ScheduleParams p{hi, lo, T};
    double prev = injection_probability(1, p);
    CHECK(prev == hi);
    for (int t = 2; t <= T; ++t) {
      double cur = injection_probability(t, p);
      CHECK(cur <= prev + 1e-15);
      prev = cur;
    }
    CHECK(prev == lo);
  }
}

TEST_CASE("draw_injection respects degenerate probabilities") {
  RngStream rng(8);
  for (int i = 0; i < 200; ++i) {
    CHECK(!draw_injection(0.0, rng));
    CHECK(draw_injection(1.0, rng));
  }
  CHECK_THROWS_AS(draw_injection(1.5, rng), RunError);
}

TEST_CASE("draw_injection rate within 3 sigma at p=0.5") {
  RngStream rng = RngStream::substream(3, 12);
  const int n = 10000;
  int hits = 0;
  for (int i = 0; i < n; ++i)
    if (draw_injection(0.5, rng)) ++hits;
  double rate = hits / static_cast<double>(n);
  CHECK(std::abs(rate - 0.5) < 3.0 * std::sqrt(0.25 / n));
}

TEST_CASE("consecutive flags from one stream look independent (chi-square)") {
  RngStream rng = RngStream::substream(21, 4);
  int counts[2][2] = {{0, 0}, {0, 0}};
  const int n_pairs = 5000;
  for (int i = 0; i < n_pairs; ++i) {
    int a = draw_injection(0.5, rng) ? 1 : 0;
    int b = draw_injection(0.5, rng) ? 1 : 0;
    counts[a][b] += 1;
  }
  double expected = n_pairs / 4.0;
  double chi2 = 0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      double d = counts[a][b] - expected;
      chi2 += d * d / expected;
    }
  // 3 dof; 16.27 is the 0.001 tail.
  CHECK(chi2 < 16.27);
}

TEST_CASE("schedule lookups are counted for purity checks") {
  instrumentation::reset_schedule_lookups();
  ScheduleParams p{0.5, 0.0, 10};
  injection_probability(3, p);
  injection_probability(4, p);
  CHECK(instrumentation::schedule_lookups.load() == 2);
  instrumentation::reset_schedule_lookups();
  CHECK(instrumentation::schedule_lookups.load() == 0);
}
