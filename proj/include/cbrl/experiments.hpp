#pragma once

#include <string>
#include <vector>

#include "cbrl/config.hpp"

namespace cbrl {

struct PresetOptions {
  std::string out_dir;
  int n_seeds = 3;
  int jobs = 2;                 // parallel (arm, seed) training runs
  bool reuse_existing = true;   // reuse finished run directories when present
  std::vector<std::string> base_overrides;  // key=value deltas on the desk base
};

struct ArmRunSummary {
  std::string arm;
  uint64_t seed = 0;
  double early_mean_reward = 0;  // mean of mean_reward over the first 20% of steps
  double final_eval_success = 0;
  std::string run_dir;
};

struct PresetVerdict {
  std::string preset;
  bool pass = false;
  bool inconclusive = false;  // an arm failed to run
  std::string details;
  std::vector<ArmRunSummary> summaries;
};

// The desk-scale base configuration every preset starts from.
TrainConfig desk_default_config();

const std::vector<std::string>& preset_names();

// Executes every (arm, seed) run the preset needs (reusing finished runs in
// opts.out_dir), evaluates the acceptance predicate and writes
// <out_dir>/verdicts/<preset>.json.
PresetVerdict run_preset(const std::string& name, const PresetOptions& opts);

std::string verdict_json(const PresetVerdict& verdict);

// Recomputes an arm summary from the metrics/summary files a run emitted
// (verdicts stay re-checkable offline).
ArmRunSummary summarize_run(const std::string& arm, uint64_t seed, const std::string& run_dir,
                            int total_steps);

}  // namespace cbrl
