#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cbrl/policy.hpp"

namespace cbrl {

enum class Algorithm { grpo, rloo };
enum class AdvantageNorm { std_norm, mean_only };

const char* to_string(Algorithm a);

// One sampled completion for one composed prompt.
struct Rollout {
  std::vector<int> prompt_tokens;
  std::vector<int> response_tokens;        // includes terminating EOS when emitted
  std::vector<double> behavior_logprobs;   // one per response token
  double reward = 0.0;
  bool injected = false;
  int group_id = 0;
};

struct RLConfig {
  Algorithm algorithm = Algorithm::grpo;
  int group_size = 8;
  double clip_eps = 0.2;
  double kl_coef = 0.001;
  double entropy_coef = 0.001;
  double grad_clip_norm = 1.0;
  int ppo_epochs = 1;
  int minibatch_groups = 0;  // groups per optimizer step; 0 = whole batch
  double std_eps = 1e-6;
  AdvantageNorm advantage_norm = AdvantageNorm::std_norm;
  double lr = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

// Group-relative advantages: (r - mean) / (population std + std_eps). A
// zero-variance group yields exactly zero advantages. mean_only skips the
// std normalization.
std::vector<double> grpo_advantages(const std::vector<double>& rewards,
                                    double std_eps = 1e-6,
                                    AdvantageNorm norm = AdvantageNorm::std_norm);

// Leave-one-out baseline: r_i - mean of the other rewards in the group.
std::vector<double> rloo_advantages(const std::vector<double>& rewards);

// PPO-style clipped surrogate for one token:
//   min(rho * A, clip(rho, 1-eps, 1+eps) * A), rho = exp(logp_new - logp_behavior)
double clipped_term(double logp_new, double logp_behavior, double advantage, double eps);

// Low-variance per-token KL estimate vs the frozen reference:
//   exp(delta) - delta - 1, delta = logp_ref - logp_new  (always >= 0)
double kl_lowvar(double logp_new, double logp_ref);

struct AdamState {
  std::vector<float> m, v;
  int64_t t = 0;
};

struct UpdateStats {
  double loss = 0.0;
  double mean_kl = 0.0;
  double mean_entropy = 0.0;
  double mean_ratio = 0.0;
  bool aborted_non_finite = false;
};

// One training update over complete groups (n rollouts sharing one prompt
// per group). Loss is the token-mean over response tokens of
//   -clipped_term + kl_coef * kl_lowvar - entropy_coef * entropy;
// prompt and exemplar tokens carry no loss terms. Gradients are global-norm
// clipped and applied with Adam. A non-finite loss or gradient aborts the
// step, leaving the parameters untouched.
UpdateStats policy_update(PolicyParams& params, const std::vector<Rollout>& rollouts,
                          const PolicyParams& ref_params, const RLConfig& cfg,
                          AdamState& adam, int workers = 1);

// Advantages for one group under the configured algorithm.
std::vector<double> group_advantages(const std::vector<double>& rewards, const RLConfig& cfg);

}  // namespace cbrl
