#include "cbrl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "json.hpp"

#include "cbrl/errors.hpp"
#include "cbrl/parallel.hpp"
#include "cbrl/seeds.hpp"

namespace cbrl {

namespace {

using ordered_json = nlohmann::ordered_json;

// Stream regions; every random decision is derived from (master_seed,
// region + counter), so trainer state never includes generator internals.
constexpr uint64_t kInjectionRegion = 0x1'0000'0000ULL;
constexpr uint64_t kRolloutRegion = 0x2'0000'0000ULL;
constexpr uint64_t kEvalRegion = 0x3'0000'0000ULL;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

ordered_json metrics_to_json(const StepMetrics& m, bool with_wall) {
  ordered_json j;
  j["step"] = m.step;
  j["p_inject"] = m.p_inject;
  j["frac_injected"] = m.frac_injected;
  j["mean_reward"] = m.mean_reward;
  j["mean_reward_injected"] = m.mean_reward_injected;
  j["mean_reward_clean"] = m.mean_reward_clean;
  j["success_rate"] = m.success_rate;
  j["loss"] = m.loss;
  j["mean_kl"] = m.mean_kl;
  j["mean_entropy"] = m.mean_entropy;
  if (with_wall) j["wall_ms"] = m.wall_ms;
  return j;
}

}  // namespace

std::string metrics_json_line(const StepMetrics& m) { return metrics_to_json(m, true).dump(); }
std::string metrics_canonical_line(const StepMetrics& m) {
  return metrics_to_json(m, false).dump();
}

std::string metrics_csv_header() {
  return "step,p_inject,frac_injected,mean_reward,mean_reward_injected,mean_reward_clean,"
         "success_rate,loss,mean_kl,mean_entropy,wall_ms";
}

std::string metrics_csv_line(const StepMetrics& m) {
  std::string out = std::to_string(m.step);
  for (double v : {m.p_inject, m.frac_injected, m.mean_reward, m.mean_reward_injected,
                   m.mean_reward_clean, m.success_rate, m.loss, m.mean_kl, m.mean_entropy,
                   m.wall_ms})
    out += "," + format_double(v);
  return out;
}

void TrainConfig::validate() const {
  task_cfg.validate(task);
  ScheduleParams sched = schedule;
  sched.total_steps = total_steps;
  sched.validate();
  rl.validate();
  policy.validate();
  train_sampling.validate();
  eval_sampling.validate();
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (k_examples < 0) throw ConfigError("k_examples must be >= 0");
  if (eval_problems < 1 || eval_repeats < 1)
    throw ConfigError("eval set size and repeats must be >= 1");
  if (static_cast<uint64_t>(total_steps) * static_cast<uint64_t>(batch_size) >
      seeds::kBankOffset)
    throw ConfigError("total_steps * batch_size exceeds the training seed region");
  if (injection_enabled && (schedule.p_start > 0 || schedule.p_end > 0) && bank_path.empty())
    throw ConfigError("bank_path required when the schedule can inject");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

StepInjection plan_step_injection(uint64_t master_seed, int t,
                                  const std::vector<TaskInstance>& instances, double p,
                                  const Bank* bank, int k, BankSamplingMode mode) {
  RngStream rng =
      RngStream::substream(master_seed, kInjectionRegion + static_cast<uint64_t>(t));
  StepInjection out;
  out.flags.resize(instances.size(), false);
  out.exemplars.resize(instances.size());
  for (size_t i = 0; i < instances.size(); ++i) {
    // Exemplars are drawn before the coin flip (they are discarded on a
    // negative draw), keeping the stream layout independent of p.
    if (bank != nullptr && k > 0) {
      if (mode == BankSamplingMode::uniform) {
        out.exemplars[i] = sample_uniform(*bank, k, rng);
      } else {
        std::set<std::string> query;
        for (const auto& tag : instances[i].tags)
          if (tag != to_string(instances[i].kind)) query.insert(tag);
        out.exemplars[i] = sample_by_tags(*bank, k, query, rng);
      }
    }
    out.flags[i] = draw_injection(p, rng);
  }
  return out;
}

std::vector<Rollout> rollout_batch(const PolicyParams& params,
                                   const std::vector<ComposedPrompt>& prompts, int n,
                                   const SamplingConfig& sampling, uint64_t master_seed,
                                   uint64_t prompt_index_base, const RewardSpec& reward,
                                   int workers) {
  if (n < 2) throw ConfigError("rollout_batch: group size must be >= 2");
  sampling.validate();
  const Vocab& vocab = Vocab::instance();
  std::vector<std::vector<Rollout>> per_prompt(prompts.size());
  parallel_for(prompts.size(), workers, [&](size_t i) {
    const ComposedPrompt& cp = prompts[i];
    if (static_cast<int>(cp.tokens.size()) + sampling.max_new_tokens > params.cfg.context) {
      std::cerr << "[rollout] dropping group " << (prompt_index_base + i)
                << ": prompt length " << cp.tokens.size() << " + budget "
                << sampling.max_new_tokens << " exceeds context " << params.cfg.context
                << "\n";
      return;
    }
    RngStream rng = RngStream::substream(master_seed, kRolloutRegion + prompt_index_base + i);
    KvCache cache = prefill(params, cp.tokens);
    auto& rollouts = per_prompt[i];
    rollouts.reserve(static_cast<size_t>(n));
    for (int s = 0; s < n; ++s) {
      SampledSeq seq = sample_from_cache(params, cache, sampling, rng);
      Rollout r;
      r.prompt_tokens = cp.tokens;
      r.response_tokens = seq.tokens;
      r.behavior_logprobs = seq.logprobs;
      r.injected = cp.injected;
      r.group_id = static_cast<int>(prompt_index_base + i);
      r.reward = total_reward(cp.instance, vocab.decode(seq.tokens), reward);
      rollouts.push_back(std::move(r));
    }
  });
  std::vector<Rollout> out;
  for (auto& group : per_prompt)
    for (auto& r : group) out.push_back(std::move(r));
  return out;
}

// ---- Checkpoints ----------------------------------------------------------------

namespace {

constexpr char kTrainMagic[8] = {'C', 'B', 'R', 'L', 'T', 'R', '0', '1'};

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
void read_pod(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

uint64_t config_fingerprint(const TrainConfig& cfg) {
  std::string s;
  s += to_string(cfg.task);
  s += "|" + format_double(cfg.schedule.p_start) + "|" + format_double(cfg.schedule.p_end);
  s += "|" + std::to_string(cfg.total_steps) + "|" + std::to_string(cfg.batch_size);
  s += "|" + std::to_string(cfg.k_examples);
  s += "|" + std::to_string(static_cast<int>(cfg.bank_sampling));
  s += "|" + std::string(to_string(cfg.rl.algorithm)) + "|" +
       std::to_string(cfg.rl.group_size);
  for (double v : {cfg.rl.clip_eps, cfg.rl.kl_coef, cfg.rl.entropy_coef,
                   cfg.rl.grad_clip_norm, cfg.rl.std_eps, cfg.rl.lr})
    s += "|" + format_double(v);
  s += "|" + std::to_string(cfg.rl.ppo_epochs) + "|" + std::to_string(cfg.rl.minibatch_groups);
  s += "|" + std::to_string(cfg.policy.d_model) + "x" + std::to_string(cfg.policy.n_layers) +
       "x" + std::to_string(cfg.policy.n_heads) + "x" + std::to_string(cfg.policy.context);
  s += "|" + format_double(cfg.train_sampling.temperature) + "|" +
       format_double(cfg.train_sampling.top_p) + "|" +
       std::to_string(cfg.train_sampling.max_new_tokens);
  s += "|" + std::to_string(cfg.master_seed);
  s += "|" + cfg.system_prompt;
  s += "|" + std::to_string(cfg.injection_enabled ? 1 : 0);
  return fnv1a64(s.data(), s.size());
}

}  // namespace

void save_train_checkpoint(const std::string& path, const TrainConfig& cfg, int step,
                           const PolicyParams& params, const AdamState& adam) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RunError("cannot open checkpoint for writing: " + path);
  out.write(kTrainMagic, sizeof(kTrainMagic));
  write_pod(out, uint32_t{1});
  write_pod(out, config_fingerprint(cfg));
  write_pod(out, Vocab::instance().fingerprint());
  write_pod(out, static_cast<int32_t>(params.vocab));
  write_pod(out, static_cast<int32_t>(params.cfg.d_model));
  write_pod(out, static_cast<int32_t>(params.cfg.n_heads));
  write_pod(out, static_cast<int32_t>(params.cfg.n_layers));
  write_pod(out, static_cast<int32_t>(params.cfg.context));
  write_pod(out, static_cast<int32_t>(step));
  write_pod(out, static_cast<int64_t>(adam.t));
  write_pod(out, static_cast<uint64_t>(params.data.size()));
  auto write_floats = [&](const std::vector<float>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
  };
  write_floats(params.data);
  if (adam.m.size() != params.data.size() || adam.v.size() != params.data.size())
    throw RunError("optimizer state size mismatch while checkpointing");
  write_floats(adam.m);
  write_floats(adam.v);
  if (!out) throw RunError("failed writing checkpoint: " + path);
}

namespace {

TrainCheckpoint read_train_checkpoint(std::istream& in, const std::string& path,
                                      const TrainConfig* cfg) {
  uint32_t version = 0;
  read_pod(in, version);
  if (version != 1) throw RunError("unsupported trainer checkpoint version");
  uint64_t cfg_fp = 0, vocab_fp = 0;
  read_pod(in, cfg_fp);
  read_pod(in, vocab_fp);
  if (vocab_fp != Vocab::instance().fingerprint())
    throw RunError("checkpoint was written with a different vocabulary");
  if (cfg != nullptr && cfg_fp != config_fingerprint(*cfg))
    throw RunError("checkpoint does not match this training configuration");
  int32_t vocab = 0, d = 0, h = 0, l = 0, ctx = 0, step = 0;
  int64_t adam_t = 0;
  uint64_t count = 0;
  read_pod(in, vocab);
  read_pod(in, d);
  read_pod(in, h);
  read_pod(in, l);
  read_pod(in, ctx);
  read_pod(in, step);
  read_pod(in, adam_t);
  read_pod(in, count);
  TrainCheckpoint ckpt;
  ckpt.step = step;
  ckpt.params.cfg = PolicyConfig{d, h, l, ctx};
  ckpt.params.vocab = vocab;
  ParamLayout lay = ParamLayout::make(ckpt.params.cfg, vocab);
  if (lay.total != count) throw RunError("corrupt trainer checkpoint: " + path);
  auto read_floats = [&](std::vector<float>& v) {
    v.resize(count);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
  };
  read_floats(ckpt.params.data);
  ckpt.adam.t = adam_t;
  read_floats(ckpt.adam.m);
  read_floats(ckpt.adam.v);
  if (!in) throw RunError("corrupt trainer checkpoint (truncated): " + path);
  return ckpt;
}

}  // namespace

TrainCheckpoint load_train_checkpoint(const std::string& path, const TrainConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RunError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kTrainMagic, sizeof(magic)) != 0)
    throw RunError("not a trainer checkpoint: " + path);
  return read_train_checkpoint(in, path, &cfg);
}

PolicyParams load_any_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RunError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in) throw RunError("cannot read checkpoint: " + path);
  if (std::memcmp(magic, kTrainMagic, sizeof(magic)) == 0)
    return read_train_checkpoint(in, path, nullptr).params;
  in.close();
  return load_policy(path);
}

// ---- Evaluation -------------------------------------------------------------------

EvalResult evaluate(const PolicyParams& params, TaskKind kind, const TaskConfig& task_cfg,
                    int n_problems, int repeats, const SamplingConfig& sampling,
                    uint64_t master_seed, const std::string& system_prompt,
                    const RewardSpec& reward, int workers) {
  sampling.validate();
  if (n_problems < 1 || repeats < 1)
    throw ConfigError("evaluate: n_problems and repeats must be >= 1");
  const Vocab& vocab = Vocab::instance();
  const std::string& sys =
      system_prompt.empty() ? default_system_prompt() : system_prompt;

  std::vector<TaskInstance> instances;
  instances.reserve(static_cast<size_t>(n_problems));
  for (int e = 0; e < n_problems; ++e)
    instances.push_back(
        generate(kind, seeds::eval_seed(master_seed, static_cast<uint64_t>(e)), task_cfg));

  size_t total = static_cast<size_t>(n_problems) * static_cast<size_t>(repeats);
  EvalResult result;
  result.records.resize(total);
  parallel_for(total, workers, [&](size_t idx) {
    int r = static_cast<int>(idx) / n_problems;
    int e = static_cast<int>(idx) % n_problems;
    const TaskInstance& inst = instances[static_cast<size_t>(e)];
    EvalRecord rec;
    rec.seed = inst.seed;
    ChatPrompt chat = compose(inst.prompt, {}, false, sys);
    std::vector<int> tokens = vocab.encode_prompt(chat);
    if (static_cast<int>(tokens.size()) + sampling.max_new_tokens > params.cfg.context) {
      std::cerr << "[eval] prompt overflow for seed " << inst.seed << "; scored 0\n";
      result.records[idx] = rec;
      return;
    }
    RngStream rng = RngStream::substream(
        master_seed, kEvalRegion + static_cast<uint64_t>(r) * static_cast<uint64_t>(n_problems) +
                         static_cast<uint64_t>(e));
    SampledSeq seq = sample(params, tokens, sampling, rng);
    rec.response = vocab.decode(seq.tokens);
    if (auto ans = extract_answer(rec.response)) {
      rec.extracted = *ans;
      rec.score = verify(inst, *ans);
    }
    result.records[idx] = rec;
  });
  double sum = 0;
  for (const auto& rec : result.records) sum += rec.score;
  result.success_rate = sum / static_cast<double>(total);
  (void)reward;
  return result;
}

// ---- Training loop ----------------------------------------------------------------

TrainResult train(const TrainConfig& cfg_in, const std::string& resume_checkpoint) {
  TrainConfig cfg = cfg_in;
  cfg.schedule.total_steps = cfg.total_steps;
  if (cfg.system_prompt.empty()) cfg.system_prompt = default_system_prompt();
  cfg.validate();
  const int workers = cfg.effective_workers();
  const Vocab& vocab = Vocab::instance();

  Bank bank;
  bool have_bank = false;
  if (cfg.injection_enabled && !cfg.bank_path.empty()) {
    bank = load_bank(cfg.bank_path);
    bank.task_kind = cfg.task;
    have_bank = true;
  }

  TrainResult result;
  result.params = init_policy(cfg.master_seed, cfg.policy);
  PolicyParams ref_params = result.params;  // frozen KL reference
  AdamState adam;
  int start_step = 0;
  if (!resume_checkpoint.empty()) {
    TrainCheckpoint ckpt = load_train_checkpoint(resume_checkpoint, cfg);
    result.params = std::move(ckpt.params);
    adam = std::move(ckpt.adam);
    start_step = ckpt.step;
    if (start_step >= cfg.total_steps)
      throw ConfigError("checkpoint is already at or past total_steps");
  }

  namespace fs = std::filesystem;
  std::ofstream metrics_jsonl, metrics_csv, eval_jsonl;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    fs::create_directories(fs::path(cfg.out_dir) / "checkpoints");
    bool fresh = resume_checkpoint.empty();
    auto mode = fresh ? std::ios::trunc : std::ios::app;
    metrics_jsonl.open(fs::path(cfg.out_dir) / "metrics.jsonl", mode);
    metrics_csv.open(fs::path(cfg.out_dir) / "metrics.csv", mode);
    eval_jsonl.open(fs::path(cfg.out_dir) / "eval_history.jsonl", mode);
    if (fresh) metrics_csv << metrics_csv_header() << '\n';
  }

  for (int t = start_step + 1; t <= cfg.total_steps; ++t) {
    auto t_begin = std::chrono::steady_clock::now();
    double p = 0.0;
    if (cfg.injection_enabled) p = injection_probability(t, cfg.schedule);

    std::vector<TaskInstance> instances;
    instances.reserve(static_cast<size_t>(cfg.batch_size));
    uint64_t base = static_cast<uint64_t>(t - 1) * static_cast<uint64_t>(cfg.batch_size);
    for (int i = 0; i < cfg.batch_size; ++i)
      instances.push_back(
          generate(cfg.task, seeds::train_seed(cfg.master_seed, base + static_cast<uint64_t>(i)),
                   cfg.task_cfg));

    StepInjection inj;
    if (cfg.injection_enabled) {
      inj = plan_step_injection(cfg.master_seed, t, instances, p,
                                have_bank ? &bank : nullptr, cfg.k_examples,
                                cfg.bank_sampling);
    } else {
      inj.flags.assign(instances.size(), false);
      inj.exemplars.resize(instances.size());
    }

    std::vector<ComposedPrompt> prompts(instances.size());
    for (size_t i = 0; i < instances.size(); ++i) {
      prompts[i].instance = instances[i];
      prompts[i].injected = inj.flags[i];
      prompts[i].chat = compose(instances[i].prompt, inj.exemplars[i], inj.flags[i],
                                cfg.system_prompt);
      prompts[i].tokens = vocab.encode_prompt(prompts[i].chat);
    }

    std::vector<Rollout> rollouts =
        rollout_batch(result.params, prompts, cfg.rl.group_size, cfg.train_sampling,
                      cfg.master_seed, base, cfg.reward, workers);

    StepMetrics m;
    m.step = t;
    m.p_inject = p;
    if (!rollouts.empty()) {
      UpdateStats stats =
          policy_update(result.params, rollouts, ref_params, cfg.rl, adam, workers);
      if (stats.aborted_non_finite)
        std::cerr << "[train] step " << t << ": non-finite loss, update aborted\n";
      double n_inj = 0, r_inj = 0, r_clean = 0, succ = 0;
      for (const auto& r : rollouts) {
        if (r.injected) {
          n_inj += 1;
          r_inj += r.reward;
        } else {
          r_clean += r.reward;
        }
        if (r.reward >= 1.0) succ += 1;
      }
      double n_total = static_cast<double>(rollouts.size());
      m.frac_injected = n_inj / n_total;
      m.mean_reward = (r_inj + r_clean) / n_total;
      m.mean_reward_injected = n_inj > 0 ? r_inj / n_inj : 0.0;
      m.mean_reward_clean = (n_total - n_inj) > 0 ? r_clean / (n_total - n_inj) : 0.0;
      m.success_rate = succ / n_total;
      m.loss = stats.loss;
      m.mean_kl = stats.mean_kl;
      m.mean_entropy = stats.mean_entropy;
    } else {
      std::cerr << "[train] step " << t << ": every group dropped, skipping update\n";
    }
    m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                          t_begin)
                    .count();
    result.metrics.push_back(m);
    if (metrics_jsonl.is_open()) {
      metrics_jsonl << metrics_json_line(m) << '\n';
      metrics_csv << metrics_csv_line(m) << '\n';
      metrics_jsonl.flush();
      metrics_csv.flush();
    }

    if (cfg.eval_every > 0 && t % cfg.eval_every == 0 && t < cfg.total_steps) {
      EvalResult er = evaluate(result.params, cfg.task, cfg.task_cfg, cfg.eval_problems,
                               cfg.eval_repeats, cfg.eval_sampling, cfg.master_seed,
                               cfg.system_prompt, cfg.reward, workers);
      result.eval_history.push_back({t, er.success_rate});
      if (eval_jsonl.is_open()) {
        ordered_json j;
        j["step"] = t;
        j["success_rate"] = er.success_rate;
        eval_jsonl << j.dump() << '\n';
        eval_jsonl.flush();
      }
    }

    if (cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0 && !cfg.out_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "step_%06d.ckpt", t);
      save_train_checkpoint((fs::path(cfg.out_dir) / "checkpoints" / name).string(), cfg, t,
                            result.params, adam);
    }
  }

  if (adam.m.empty()) {
    ParamLayout lay = ParamLayout::make(cfg.policy, result.params.vocab);
    adam.m.assign(lay.total, 0.0f);
    adam.v.assign(lay.total, 0.0f);
  }

  EvalResult final_eval =
      evaluate(result.params, cfg.task, cfg.task_cfg, cfg.eval_problems, cfg.eval_repeats,
               cfg.eval_sampling, cfg.master_seed, cfg.system_prompt, cfg.reward, workers);
  result.final_eval_success = final_eval.success_rate;
  result.eval_history.push_back({cfg.total_steps, final_eval.success_rate});

  if (!cfg.out_dir.empty()) {
    save_train_checkpoint((fs::path(cfg.out_dir) / "checkpoints" / "final.ckpt").string(),
                          cfg, cfg.total_steps, result.params, adam);
    if (eval_jsonl.is_open()) {
      ordered_json j;
      j["step"] = cfg.total_steps;
      j["success_rate"] = final_eval.success_rate;
      eval_jsonl << j.dump() << '\n';
    }
    std::ofstream summary(fs::path(cfg.out_dir) / "summary.json");
    ordered_json j;
    j["steps"] = cfg.total_steps;
    j["final_eval_success"] = result.final_eval_success;
    summary << j.dump(2) << '\n';
    std::ofstream report(fs::path(cfg.out_dir) / "eval_final.jsonl");
    for (const auto& rec : final_eval.records) {
      ordered_json rj;
      rj["seed"] = rec.seed;
      rj["response"] = rec.response;
      rj["extracted"] = rec.extracted;
      rj["score"] = rec.score;
      report << rj.dump() << '\n';
    }
  }
  return result;
}

}  // namespace cbrl
