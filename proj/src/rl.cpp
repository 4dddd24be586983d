#include "cbrl/rl.hpp"

#include <algorithm>
#include <cmath>

#include "cbrl/errors.hpp"
#include "cbrl/parallel.hpp"

namespace cbrl {

const char* to_string(Algorithm a) { return a == Algorithm::grpo ? "grpo" : "rloo"; }

void RLConfig::validate() const {
  if (group_size < 2) throw ConfigError("group_size must be >= 2");
  if (clip_eps < 0 || kl_coef < 0 || entropy_coef < 0 || grad_clip_norm < 0)
    throw ConfigError("rl coefficients must be >= 0");
  if (ppo_epochs < 1) throw ConfigError("ppo_epochs must be >= 1");
  if (minibatch_groups < 0) throw ConfigError("minibatch_groups must be >= 0");
  if (std_eps <= 0) throw ConfigError("std_eps must be > 0");
  if (lr <= 0) throw ConfigError("learning rate must be > 0");
}

namespace {

bool all_equal(const std::vector<double>& v) {
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] != v[0]) return false;
  return true;
}

}  // namespace

std::vector<double> grpo_advantages(const std::vector<double>& rewards, double std_eps,
                                    AdvantageNorm norm) {
  size_t n = rewards.size();
  if (n < 2) throw RunError("grpo_advantages: group too small");
  if (all_equal(rewards)) return std::vector<double>(n, 0.0);
  double mean = 0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(n);
  std::vector<double> adv(n);
  if (norm == AdvantageNorm::mean_only) {
    for (size_t i = 0; i < n; ++i) adv[i] = rewards[i] - mean;
    return adv;
  }
  double var = 0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(n);  // population variance
  double denom = std::sqrt(var) + std_eps;
  for (size_t i = 0; i < n; ++i) adv[i] = (rewards[i] - mean) / denom;
  return adv;
}

std::vector<double> rloo_advantages(const std::vector<double>& rewards) {
  size_t n = rewards.size();
  if (n < 2) throw RunError("rloo_advantages: group too small");
  if (all_equal(rewards)) return std::vector<double>(n, 0.0);
  // Pairwise-difference form of r_i - mean_{j != i}(r_j); a constant reward
  // shift cancels term by term, before the division can round.
  std::vector<double> adv(n);
  for (size_t i = 0; i < n; ++i) {
    double acc = 0;
    for (size_t j = 0; j < n; ++j)
      if (j != i) acc += rewards[i] - rewards[j];
    adv[i] = acc / static_cast<double>(n - 1);
  }
  return adv;
}

std::vector<double> group_advantages(const std::vector<double>& rewards, const RLConfig& cfg) {
  return cfg.algorithm == Algorithm::grpo
             ? grpo_advantages(rewards, cfg.std_eps, cfg.advantage_norm)
             : rloo_advantages(rewards);
}

double clipped_term(double logp_new, double logp_behavior, double advantage, double eps) {
  double rho = std::exp(logp_new - logp_behavior);
  double clipped = std::clamp(rho, 1.0 - eps, 1.0 + eps);
  return std::min(rho * advantage, clipped * advantage);
}

double kl_lowvar(double logp_new, double logp_ref) {
  double delta = logp_ref - logp_new;
  return std::exp(delta) - delta - 1.0;
}

namespace {

struct GroupView {
  int first = 0;  // rollout index of first member
  int n = 0;
  int tokens = 0;
};

struct GroupWork {
  std::vector<float> grad;
  double loss_sum = 0, kl_sum = 0, ent_sum = 0, ratio_sum = 0;
  int tokens = 0;
  bool finite = true;
};

}  // namespace

UpdateStats policy_update(PolicyParams& params, const std::vector<Rollout>& rollouts,
                          const PolicyParams& ref_params, const RLConfig& cfg,
                          AdamState& adam, int workers) {
  cfg.validate();
  const int n = cfg.group_size;
  if (rollouts.empty() || rollouts.size() % static_cast<size_t>(n) != 0)
    throw RunError("policy_update: rollouts do not form complete groups");
  const size_t n_groups = rollouts.size() / static_cast<size_t>(n);
  for (size_t g = 0; g < n_groups; ++g) {
    for (int m = 1; m < n; ++m) {
      const auto& a = rollouts[g * static_cast<size_t>(n)];
      const auto& b = rollouts[g * static_cast<size_t>(n) + static_cast<size_t>(m)];
      if (a.group_id != b.group_id || a.prompt_tokens != b.prompt_tokens)
        throw RunError("policy_update: group members must share one prompt");
    }
  }

  ParamLayout lay = ParamLayout::make(params.cfg, params.vocab);
  if (adam.m.empty()) {
    adam.m.assign(lay.total, 0.0f);
    adam.v.assign(lay.total, 0.0f);
  }

  // Advantages per rollout.
  std::vector<double> advantages(rollouts.size());
  for (size_t g = 0; g < n_groups; ++g) {
    std::vector<double> rewards(static_cast<size_t>(n));
    for (int m = 0; m < n; ++m)
      rewards[static_cast<size_t>(m)] = rollouts[g * static_cast<size_t>(n) + static_cast<size_t>(m)].reward;
    auto adv = group_advantages(rewards, cfg);
    for (int m = 0; m < n; ++m)
      advantages[g * static_cast<size_t>(n) + static_cast<size_t>(m)] = adv[static_cast<size_t>(m)];
  }

  // Reference logprobs for the KL term (frozen snapshot); prompt prefilled
  // once per group.
  std::vector<std::vector<std::vector<float>>> ref_lp(n_groups);
  if (cfg.kl_coef > 0) {
    parallel_for(n_groups, workers, [&](size_t g) {
      const auto& first = rollouts[g * static_cast<size_t>(n)];
      KvCache cache = prefill(ref_params, first.prompt_tokens);
      ref_lp[g].resize(static_cast<size_t>(n));
      for (int m = 0; m < n; ++m)
        ref_lp[g][static_cast<size_t>(m)] = score_response(
            ref_params, cache, rollouts[g * static_cast<size_t>(n) + static_cast<size_t>(m)].response_tokens);
    });
  }

  const size_t mb_groups = cfg.minibatch_groups > 0
                               ? std::min<size_t>(static_cast<size_t>(cfg.minibatch_groups), n_groups)
                               : n_groups;

  UpdateStats stats;
  double total_loss_tokens = 0, total_tokens = 0;
  double sum_kl = 0, sum_ent = 0, sum_ratio = 0;

  // Snapshot so an aborted step leaves parameters and optimizer state intact.
  std::vector<float> params_backup = params.data;
  AdamState adam_backup = adam;

  std::vector<float> grad(lay.total);
  for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    for (size_t mb_start = 0; mb_start < n_groups; mb_start += mb_groups) {
      size_t mb_end = std::min(mb_start + mb_groups, n_groups);
      size_t mb_count = mb_end - mb_start;

      // Token count normalizes the minibatch loss.
      size_t n_tokens = 0;
      for (size_t g = mb_start; g < mb_end; ++g)
        for (int m = 0; m < n; ++m)
          n_tokens += rollouts[g * static_cast<size_t>(n) + static_cast<size_t>(m)].response_tokens.size();
      if (n_tokens == 0) continue;
      const double inv_n = 1.0 / static_cast<double>(n_tokens);

      std::vector<GroupWork> work(mb_count);
      parallel_for(mb_count, workers, [&](size_t wi) {
        size_t g = mb_start + wi;
        GroupWork& gw = work[wi];
        gw.grad.assign(lay.total, 0.0f);
        const Rollout* group = &rollouts[g * static_cast<size_t>(n)];
        std::vector<std::vector<int>> responses(static_cast<size_t>(n));
        for (int m = 0; m < n; ++m) responses[static_cast<size_t>(m)] = group[m].response_tokens;
        GroupPass<float> pass(params, group[0].prompt_tokens, responses);

        std::vector<std::vector<float>> c_taken(static_cast<size_t>(n)),
            c_ent(static_cast<size_t>(n));
        for (int m = 0; m < n; ++m) {
          const auto& resp = responses[static_cast<size_t>(m)];
          const double adv = advantages[g * static_cast<size_t>(n) + static_cast<size_t>(m)];
          c_taken[static_cast<size_t>(m)].assign(resp.size(), 0.0f);
          c_ent[static_cast<size_t>(m)].assign(resp.size(), 0.0f);
          for (size_t j = 0; j < resp.size(); ++j) {
            double lp_new = pass.taken_logprob(m, static_cast<int>(j));
            double lp_beh = group[m].behavior_logprobs[j];
            double rho = std::exp(lp_new - lp_beh);
            double clipped_rho = std::clamp(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
            double unclipped = rho * adv;
            double clipped = clipped_rho * adv;
            double surr = std::min(unclipped, clipped);
            bool active = unclipped <= clipped;

            double kl = 0.0, dkl_dlp = 0.0;
            if (cfg.kl_coef > 0) {
              double lp_ref = ref_lp[g][static_cast<size_t>(m)][j];
              double delta = lp_ref - lp_new;
              kl = std::exp(delta) - delta - 1.0;
              dkl_dlp = 1.0 - std::exp(delta);  // d(kl)/d(lp_new)
            }
            double ent = pass.entropy(m, static_cast<int>(j));

            gw.loss_sum += (-surr + cfg.kl_coef * kl - cfg.entropy_coef * ent) * inv_n;
            gw.kl_sum += kl;
            gw.ent_sum += ent;
            gw.ratio_sum += rho;

            double ct = (-(active ? unclipped : 0.0) + cfg.kl_coef * dkl_dlp) * inv_n;
            c_taken[static_cast<size_t>(m)][j] = static_cast<float>(ct);
            c_ent[static_cast<size_t>(m)][j] = static_cast<float>(-cfg.entropy_coef * inv_n);
          }
          gw.tokens += static_cast<int>(resp.size());
        }
        pass.backward(c_taken, c_ent, gw.grad);
      });

      // Deterministic reduction in group order.
      std::fill(grad.begin(), grad.end(), 0.0f);
      double mb_loss = 0;
      size_t mb_tokens = 0;
      for (auto& gw : work) {
        for (size_t i = 0; i < grad.size(); ++i) grad[i] += gw.grad[i];
        mb_loss += gw.loss_sum;
        sum_kl += gw.kl_sum;
        sum_ent += gw.ent_sum;
        sum_ratio += gw.ratio_sum;
        mb_tokens += static_cast<size_t>(gw.tokens);
      }

      double norm_sq = 0;
      for (float gv : grad) norm_sq += static_cast<double>(gv) * static_cast<double>(gv);
      if (!std::isfinite(mb_loss) || !std::isfinite(norm_sq)) {
        params.data = params_backup;
        adam = adam_backup;
        stats.aborted_non_finite = true;
        stats.loss = mb_loss;
        return stats;
      }
      double norm = std::sqrt(norm_sq);
      double scale = (cfg.grad_clip_norm > 0 && norm > cfg.grad_clip_norm)
                         ? cfg.grad_clip_norm / norm
                         : 1.0;

      adam.t += 1;
      const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
      const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
      for (size_t i = 0; i < grad.size(); ++i) {
        double gv = static_cast<double>(grad[i]) * scale;
        double m1 = b1 * adam.m[i] + (1.0 - b1) * gv;
        double v1 = b2 * adam.v[i] + (1.0 - b2) * gv * gv;
        adam.m[i] = static_cast<float>(m1);
        adam.v[i] = static_cast<float>(v1);
        double step = cfg.lr * (m1 / bc1) / (std::sqrt(v1 / bc2) + cfg.adam_eps);
        params.data[i] = static_cast<float>(params.data[i] - step);
      }

      total_loss_tokens += mb_loss * static_cast<double>(mb_tokens);
      total_tokens += static_cast<double>(mb_tokens);
    }
  }

  if (total_tokens > 0) {
    stats.loss = total_loss_tokens / total_tokens;
    stats.mean_kl = sum_kl / total_tokens;
    stats.mean_entropy = sum_ent / total_tokens;
    stats.mean_ratio = sum_ratio / total_tokens;
  }
  return stats;
}

}  // namespace cbrl
