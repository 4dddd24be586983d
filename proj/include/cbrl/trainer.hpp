#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cbrl/bank.hpp"
#include "cbrl/policy.hpp"
#include "cbrl/prompting.hpp"
#include "cbrl/rl.hpp"
#include "cbrl/schedule.hpp"
#include "cbrl/tasks.hpp"

namespace cbrl {

enum class BankSamplingMode { uniform, tags };

struct TrainConfig {
  TaskKind task = TaskKind::spell_backward;
  TaskConfig task_cfg;

  ScheduleParams schedule;  // total_steps mirrors the field below
  std::string bank_path;    // required when the schedule can inject
  int k_examples = 2;
  BankSamplingMode bank_sampling = BankSamplingMode::uniform;

  RLConfig rl;
  PolicyConfig policy;
  SamplingConfig train_sampling{1.0, 1.0, 64};
  SamplingConfig eval_sampling{0.6, 0.9, 64};

  int batch_size = 16;  // m prompts per step
  int total_steps = 300;
  uint64_t master_seed = 1;

  int eval_every = 0;  // 0 = final evaluation only
  int eval_problems = 100;
  int eval_repeats = 3;
  int checkpoint_every = 0;  // 0 = final checkpoint only

  std::string out_dir;        // empty = keep everything in memory
  std::string system_prompt;  // resolved text; defaults to default_system_prompt()

  bool injection_enabled = true;  // false compiles out the injection code path
  int workers = 1;
  bool strict_sequential = true;  // forces workers = 1

  RewardSpec reward;

  void validate() const;
  int effective_workers() const { return strict_sequential ? 1 : workers; }
};

struct StepMetrics {
  int step = 0;
  double p_inject = 0;
  double frac_injected = 0;
  double mean_reward = 0;
  double mean_reward_injected = 0;
  double mean_reward_clean = 0;
  double success_rate = 0;  // fraction of rollouts with reward >= 1.0
  double loss = 0;
  double mean_kl = 0;
  double mean_entropy = 0;
  double wall_ms = 0;
};

// Full line, schema = field order above.
std::string metrics_json_line(const StepMetrics& m);
// Same record without the wall-clock field (the one intentionally
// non-deterministic column); used for reproducibility comparisons.
std::string metrics_canonical_line(const StepMetrics& m);
std::string metrics_csv_header();
std::string metrics_csv_line(const StepMetrics& m);

struct EvalRecord {
  uint64_t seed = 0;
  std::string response;
  std::string extracted;  // empty when extraction failed
  double score = 0;
};

struct EvalResult {
  double success_rate = 0;
  std::vector<EvalRecord> records;
};

struct EvalPoint {
  int step = 0;
  double success_rate = 0;
};

struct TrainResult {
  PolicyParams params;
  std::vector<StepMetrics> metrics;
  std::vector<EvalPoint> eval_history;
  double final_eval_success = 0;
};

// Per-sample injection decisions for one training step, exactly as the
// training loop draws them: exemplars first, then the Bernoulli flag, one
// dedicated stream per step. Exposed so schedule statistics can be tested
// against the real draw sequence.
struct StepInjection {
  std::vector<bool> flags;
  std::vector<std::vector<BankEntry>> exemplars;
};
StepInjection plan_step_injection(uint64_t master_seed, int t,
                                  const std::vector<TaskInstance>& instances, double p,
                                  const Bank* bank, int k, BankSamplingMode mode);

// n completions per prompt, grouped; a prompt whose tokens plus the sampling
// budget overflow the context is dropped whole (logged to stderr).
struct ComposedPrompt {
  ChatPrompt chat;
  std::vector<int> tokens;
  bool injected = false;
  TaskInstance instance;
};
std::vector<Rollout> rollout_batch(const PolicyParams& params,
                                   const std::vector<ComposedPrompt>& prompts, int n,
                                   const SamplingConfig& sampling, uint64_t master_seed,
                                   uint64_t step_index, const RewardSpec& reward,
                                   int workers);

// The Algorithm-1 outer loop. Deterministic given master_seed (all streams
// are counter-derived); resume_checkpoint continues a previous run
// bit-exactly.
TrainResult train(const TrainConfig& cfg, const std::string& resume_checkpoint = "");

// Held-out evaluation: prompts always composed without exemplars, instances
// drawn from the evaluation seed region, success = mean verify score over
// n_problems x repeats.
EvalResult evaluate(const PolicyParams& params, TaskKind kind, const TaskConfig& task_cfg,
                    int n_problems, int repeats, const SamplingConfig& sampling,
                    uint64_t master_seed, const std::string& system_prompt,
                    const RewardSpec& reward = {}, int workers = 1);

// Trainer checkpoint (policy + optimizer + step counter).
void save_train_checkpoint(const std::string& path, const TrainConfig& cfg, int step,
                           const PolicyParams& params, const AdamState& adam);
struct TrainCheckpoint {
  int step = 0;
  PolicyParams params;
  AdamState adam;
};
TrainCheckpoint load_train_checkpoint(const std::string& path, const TrainConfig& cfg);

// Reads the policy from either a policy or a trainer checkpoint.
PolicyParams load_any_policy(const std::string& path);

}  // namespace cbrl
