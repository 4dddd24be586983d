#pragma once

#include <atomic>
#include <cstdint>

#include "cbrl/rng.hpp"

namespace cbrl {

struct ScheduleParams {
  double p_start = 0.5;
  double p_end = 0.0;
  int total_steps = 1;

  void validate() const;  // throws ConfigError
};

// Linear annealing of the injection probability over the training budget:
// p(t) = p_start + (t-1)/(T-1) * (p_end - p_start), with p(1) = p_start when
// T == 1 (the interpolation is singular there). Throws RunError when t is
// outside [1, T].
double injection_probability(int t, const ScheduleParams& params);

// One Bernoulli(p) decision per sample in the minibatch.
bool draw_injection(double p, RngStream& rng);

namespace instrumentation {
// Number of injection_probability calls since the last reset; evaluation
// paths are asserted to leave this untouched.
extern std::atomic<uint64_t> schedule_lookups;
void reset_schedule_lookups();
}  // namespace instrumentation

}  // namespace cbrl
