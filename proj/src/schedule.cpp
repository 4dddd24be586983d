#include "cbrl/schedule.hpp"

#include "cbrl/errors.hpp"

namespace cbrl {

void ScheduleParams::validate() const {
  if (p_start < 0.0 || p_start > 1.0 || p_end < 0.0 || p_end > 1.0)
    throw ConfigError("schedule probabilities must lie in [0, 1]");
  if (total_steps < 1) throw ConfigError("schedule total_steps must be >= 1");
}

double injection_probability(int t, const ScheduleParams& params) {
  params.validate();
  if (t < 1 || t > params.total_steps)
    throw RunError("injection_probability: step out of range");
  instrumentation::schedule_lookups.fetch_add(1, std::memory_order_relaxed);
  if (params.total_steps == 1 || t == 1) return params.p_start;
  if (t == params.total_steps) return params.p_end;  // exact endpoint
  double frac = static_cast<double>(t - 1) / static_cast<double>(params.total_steps - 1);
  return params.p_start + frac * (params.p_end - params.p_start);
}

bool draw_injection(double p, RngStream& rng) {
  if (p < 0.0 || p > 1.0) throw RunError("draw_injection: p outside [0, 1]");
  return rng.bernoulli(p);
}

namespace instrumentation {
std::atomic<uint64_t> schedule_lookups{0};
void reset_schedule_lookups() { schedule_lookups.store(0); }
}  // namespace instrumentation

}  // namespace cbrl
