#include "cbrl/experiments.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>

#include "json.hpp"

#include "cbrl/errors.hpp"
#include "cbrl/parallel.hpp"
#include "cbrl/text.hpp"

namespace cbrl {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

TrainConfig desk_default_config() {
  std::map<std::string, std::string> kv = {
      {"task", "spell_backward"},
      {"task.min_word_len", "3"},
      {"task.max_word_len", "5"},
      {"batch_size", "16"},
      {"group_size", "8"},
      {"total_steps", "300"},
      {"algorithm", "grpo"},
      {"p_start", "0.5"},
      {"p_end", "0"},
      {"k_examples", "2"},
      {"bank_sampling", "uniform"},
      {"policy.d", "64"},
      {"policy.layers", "2"},
      {"policy.heads", "4"},
      {"policy.context", "512"},
      {"max_new_tokens", "24"},
      {"train.temperature", "1.0"},
      {"train.top_p", "1.0"},
      {"eval.temperature", "0.6"},
      {"eval.top_p", "0.9"},
      {"eval.max_new_tokens", "24"},
      {"eval.problems", "100"},
      {"eval.repeats", "3"},
      {"lr", "0.0003"},
      {"kl_coef", "0.001"},
      {"entropy_coef", "0.001"},
      {"clip_eps", "0.2"},
      {"grad_clip_norm", "1.0"},
      {"system_prompt", "minimal"},
      {"strict_sequential", "true"},
  };
  return parse_train_config(kv);
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"early-reward", "anneal-retention",
                                                 "p-sweep", "rloo-transfer"};
  return names;
}

namespace {

struct ArmSpec {
  std::string name;
  std::vector<std::string> deltas;  // key=value on the base config
  bool needs_bank = false;
};

std::vector<ArmSpec> arms_for(const std::string& preset) {
  ArmSpec grpo_base{"grpo-base", {"p_start=0", "p_end=0"}, false};
  ArmSpec grpo_cbrl{"grpo-cbrl", {}, true};
  ArmSpec grpo_p10{"grpo-p10", {"p_start=1.0"}, true};
  ArmSpec rloo_base{"rloo-base", {"algorithm=rloo", "p_start=0", "p_end=0"}, false};
  ArmSpec rloo_cbrl{"rloo-cbrl", {"algorithm=rloo"}, true};
  if (preset == "early-reward" || preset == "anneal-retention")
    return {grpo_base, grpo_cbrl};
  if (preset == "p-sweep") return {grpo_base, grpo_cbrl, grpo_p10};
  if (preset == "rloo-transfer") return {rloo_base, rloo_cbrl};
  throw ConfigError("unknown preset: " + preset);
}

std::string bank_path_for(const std::string& out_dir, TaskKind kind, uint64_t seed) {
  return (fs::path(out_dir) / "banks" /
          (std::string(to_string(kind)) + "_s" + std::to_string(seed) + ".jsonl"))
      .string();
}

}  // namespace

ArmRunSummary summarize_run(const std::string& arm, uint64_t seed, const std::string& run_dir,
                            int total_steps) {
  ArmRunSummary s;
  s.arm = arm;
  s.seed = seed;
  s.run_dir = run_dir;
  int early_end = std::max(1, total_steps / 5);

  std::ifstream metrics(fs::path(run_dir) / "metrics.jsonl");
  if (!metrics) throw RunError("missing metrics.jsonl in " + run_dir);
  std::string line;
  double sum = 0;
  int count = 0;
  while (std::getline(metrics, line)) {
    if (trim(line).empty()) continue;
    ordered_json j = ordered_json::parse(line);
    int step = j.at("step").get<int>();
    if (step <= early_end) {
      sum += j.at("mean_reward").get<double>();
      ++count;
    }
  }
  if (count == 0) throw RunError("metrics.jsonl has no early-window rows in " + run_dir);
  s.early_mean_reward = sum / count;

  std::ifstream summary(fs::path(run_dir) / "summary.json");
  if (!summary) throw RunError("missing summary.json in " + run_dir);
  ordered_json sj = ordered_json::parse(summary);
  s.final_eval_success = sj.at("final_eval_success").get<double>();
  return s;
}

std::string verdict_json(const PresetVerdict& verdict) {
  ordered_json j;
  j["preset"] = verdict.preset;
  j["pass"] = verdict.pass;
  j["inconclusive"] = verdict.inconclusive;
  j["details"] = verdict.details;
  j["runs"] = ordered_json::array();
  for (const auto& s : verdict.summaries) {
    ordered_json r;
    r["arm"] = s.arm;
    r["seed"] = s.seed;
    r["early_mean_reward"] = s.early_mean_reward;
    r["final_eval_success"] = s.final_eval_success;
    r["run_dir"] = s.run_dir;
    j["runs"].push_back(r);
  }
  return j.dump(2);
}

PresetVerdict run_preset(const std::string& name, const PresetOptions& opts) {
  PresetVerdict verdict;
  verdict.preset = name;
  if (opts.out_dir.empty()) throw ConfigError("preset runs need an output directory");
  std::vector<ArmSpec> arms = arms_for(name);

  TrainConfig base = desk_default_config();
  {
    auto kv = config_echo(base);
    apply_overrides(kv, opts.base_overrides);
    kv.erase("bank_path");
    kv.erase("out_dir");
    base = parse_train_config(kv);
  }

  fs::create_directories(fs::path(opts.out_dir) / "banks");
  fs::create_directories(fs::path(opts.out_dir) / "runs");
  fs::create_directories(fs::path(opts.out_dir) / "verdicts");

  struct Job {
    ArmSpec arm;
    uint64_t seed;
    TrainConfig cfg;
    std::string run_dir;
  };
  std::vector<Job> jobs;
  for (const auto& arm : arms) {
    for (int s = 1; s <= opts.n_seeds; ++s) {
      uint64_t seed = static_cast<uint64_t>(s);
      auto kv = config_echo(base);
      apply_overrides(kv, arm.deltas);
      kv["master_seed"] = std::to_string(seed);
      if (arm.needs_bank) {
        std::string bank_file = bank_path_for(opts.out_dir, base.task, seed);
        if (!fs::exists(bank_file)) {
          Bank bank = build_bank(base.task, 20, seed, base.task_cfg);
          save_bank(bank_file, bank);
        }
        kv["bank_path"] = bank_file;
      }
      Job job;
      job.arm = arm;
      job.seed = seed;
      job.run_dir =
          (fs::path(opts.out_dir) / "runs" / (arm.name + "_s" + std::to_string(seed))).string();
      kv["out_dir"] = job.run_dir;
      job.cfg = parse_train_config(kv);
      jobs.push_back(std::move(job));
    }
  }

  std::mutex log_mutex;
  std::vector<std::string> failures(jobs.size());
  parallel_for(jobs.size(), opts.jobs, [&](size_t i) {
    const Job& job = jobs[i];
    bool done = opts.reuse_existing && fs::exists(fs::path(job.run_dir) / "summary.json") &&
                fs::exists(fs::path(job.run_dir) / "metrics.jsonl");
    if (done) {
      std::lock_guard<std::mutex> lock(log_mutex);
      std::cerr << "[preset " << name << "] reusing " << job.run_dir << "\n";
      return;
    }
    try {
      {
        std::lock_guard<std::mutex> lock(log_mutex);
        std::cerr << "[preset " << name << "] training " << job.arm.name << " seed "
                  << job.seed << "\n";
      }
      train(job.cfg);
      // Arm manifest: config echo + declared deltas, for offline arm diffs.
      ordered_json mj;
      mj["arm"] = job.arm.name;
      mj["seed"] = job.seed;
      mj["deltas"] = job.arm.deltas;
      ordered_json echo;
      for (const auto& [k, v] : config_echo(job.cfg)) echo[k] = v;
      mj["config"] = echo;
      if (!job.cfg.bank_path.empty())
        mj["bank_fnv1a64"] = fnv1a64_file(job.cfg.bank_path);
      std::ofstream manifest(fs::path(job.run_dir) / "manifest.json");
      manifest << mj.dump(2) << '\n';
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });

  for (size_t i = 0; i < jobs.size(); ++i) {
    if (!failures[i].empty()) {
      verdict.inconclusive = true;
      verdict.details += "arm " + jobs[i].arm.name + " seed " +
                         std::to_string(jobs[i].seed) + " failed: " + failures[i] + "\n";
    }
  }
  if (verdict.inconclusive) {
    std::ofstream out(fs::path(opts.out_dir) / "verdicts" / (name + ".json"));
    out << verdict_json(verdict) << '\n';
    return verdict;
  }

  auto summary_of = [&](const std::string& arm, uint64_t seed) -> const ArmRunSummary& {
    for (const auto& s : verdict.summaries)
      if (s.arm == arm && s.seed == seed) return s;
    throw RunError("missing summary for arm " + arm);
  };
  for (const auto& job : jobs)
    verdict.summaries.push_back(
        summarize_run(job.arm.name, job.seed, job.run_dir, job.cfg.total_steps));

  int wins = 0;
  std::string detail;
  const int need = opts.n_seeds / 2 + 1;
  if (name == "early-reward" || name == "rloo-transfer") {
    std::string base_arm = (name == "early-reward") ? "grpo-base" : "rloo-base";
    std::string cbrl_arm = (name == "early-reward") ? "grpo-cbrl" : "rloo-cbrl";
    for (int s = 1; s <= opts.n_seeds; ++s) {
      double b = summary_of(base_arm, static_cast<uint64_t>(s)).early_mean_reward;
      double c = summary_of(cbrl_arm, static_cast<uint64_t>(s)).early_mean_reward;
      bool win = c > b;
      wins += win ? 1 : 0;
      detail += "seed " + std::to_string(s) + ": early " + cbrl_arm + "=" +
                std::to_string(c) + (win ? " > " : " <= ") + base_arm + "=" +
                std::to_string(b) + "\n";
    }
    verdict.pass = wins >= need;
  } else if (name == "anneal-retention") {
    for (int s = 1; s <= opts.n_seeds; ++s) {
      double b = summary_of("grpo-base", static_cast<uint64_t>(s)).final_eval_success;
      double c = summary_of("grpo-cbrl", static_cast<uint64_t>(s)).final_eval_success;
      bool win = c >= b;
      wins += win ? 1 : 0;
      detail += "seed " + std::to_string(s) + ": final eval cbrl=" + std::to_string(c) +
                (win ? " >= " : " < ") + "base=" + std::to_string(b) + "\n";
    }
    verdict.pass = wins >= need;
  } else if (name == "p-sweep") {
    for (int s = 1; s <= opts.n_seeds; ++s) {
      double p0 = summary_of("grpo-base", static_cast<uint64_t>(s)).final_eval_success;
      double p05 = summary_of("grpo-cbrl", static_cast<uint64_t>(s)).final_eval_success;
      double p10 = summary_of("grpo-p10", static_cast<uint64_t>(s)).final_eval_success;
      bool win = p05 >= p0 && p05 >= p10;
      wins += win ? 1 : 0;
      detail += "seed " + std::to_string(s) + ": p0=" + std::to_string(p0) +
                " p0.5=" + std::to_string(p05) + " p1=" + std::to_string(p10) +
                (win ? " (peak at 0.5)" : " (no peak)") + "\n";
    }
    verdict.pass = wins >= need;
  }
  verdict.details = detail + "wins: " + std::to_string(wins) + "/" +
                    std::to_string(opts.n_seeds) + " (need " + std::to_string(need) + ")";

  std::ofstream out(fs::path(opts.out_dir) / "verdicts" / (name + ".json"));
  out << verdict_json(verdict) << '\n';
  return verdict;
}

}  // namespace cbrl
