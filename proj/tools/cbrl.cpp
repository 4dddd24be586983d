#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cbrl/config.hpp"
#include "cbrl/errors.hpp"
#include "cbrl/experiments.hpp"
#include "cbrl/seeds.hpp"
#include "cbrl/trainer.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace cbrl;

namespace {

constexpr const char* kVersion = "cbrl 0.1.0";

std::string timestamp_utc() {
  char buf[32];
  std::time_t now = std::time(nullptr);
  std::tm tm_utc;
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void write_manifest(const std::string& path, const std::string& command,
                    const std::map<std::string, std::string>& config,
                    const std::map<std::string, std::string>& artifacts) {
  ordered_json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["timestamp"] = timestamp_utc();
  ordered_json cfg;
  for (const auto& [k, v] : config) cfg[k] = v;
  j["config"] = cfg;
  ordered_json files;
  for (const auto& [name, file] : artifacts) {
    ordered_json f;
    f["path"] = file;
    char hex[24];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64_file(file)));
    f["fnv1a64"] = hex;
    files[name] = f;
  }
  j["artifacts"] = files;
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

TrainConfig config_from_sets(const std::vector<std::string>& sets) {
  std::map<std::string, std::string> kv;
  apply_overrides(kv, sets);
  return parse_train_config(kv);
}

int cmd_gen(const std::string& task, int n, uint64_t seed, const std::string& out_path,
            const std::vector<std::string>& sets) {
  auto kind = task_kind_from_string(task);
  if (!kind) throw ConfigError("unknown task: " + task);
  std::vector<std::string> all_sets = {"task=" + task};
  all_sets.insert(all_sets.end(), sets.begin(), sets.end());
  TrainConfig cfg = config_from_sets(all_sets);
  if (n < 0) throw ConfigError("--n must be >= 0");
  std::vector<TaskInstance> instances;
  instances.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    instances.push_back(
        generate(*kind, seeds::train_seed(seed, static_cast<uint64_t>(i)), cfg.task_cfg));
  write_dataset(out_path, instances);
  std::map<std::string, std::string> meta = config_echo(cfg);
  meta["gen.n"] = std::to_string(n);
  meta["gen.seed"] = std::to_string(seed);
  write_manifest(out_path + ".manifest.json", "gen", meta, {{"dataset", out_path}});
  std::cout << "wrote " << n << " instances to " << out_path << "\n";
  return 0;
}

int cmd_bank(const std::string& task, int size, uint64_t seed, const std::string& out_path,
             const std::vector<std::string>& sets) {
  auto kind = task_kind_from_string(task);
  if (!kind) throw ConfigError("unknown task: " + task);
  std::vector<std::string> all_sets = {"task=" + task};
  all_sets.insert(all_sets.end(), sets.begin(), sets.end());
  TrainConfig cfg = config_from_sets(all_sets);
  Bank bank = build_bank(*kind, size, seed, cfg.task_cfg);
  save_bank(out_path, bank);
  std::map<std::string, std::string> meta = config_echo(cfg);
  meta["bank.size"] = std::to_string(size);
  meta["bank.seed"] = std::to_string(seed);
  write_manifest(out_path + ".manifest.json", "bank", meta, {{"bank", out_path}});
  std::cout << "wrote " << bank.entries.size() << " bank entries to " << out_path << "\n";
  return 0;
}

int cmd_schedule(double p_start, double p_end, int steps) {
  ScheduleParams params{p_start, p_end, steps};
  params.validate();
  std::cout << "t\tp_t\n";
  for (int t = 1; t <= steps; ++t)
    std::cout << t << "\t" << injection_probability(t, params) << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& resume) {
  std::map<std::string, std::string> kv;
  if (!config_path.empty()) kv = read_config_file(config_path);
  apply_overrides(kv, sets);
  TrainConfig cfg = parse_train_config(kv);
  TrainResult result = train(cfg, resume);
  if (!cfg.out_dir.empty()) {
    std::map<std::string, std::string> artifacts;
    artifacts["metrics"] = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
    artifacts["checkpoint"] =
        (fs::path(cfg.out_dir) / "checkpoints" / "final.ckpt").string();
    if (!cfg.bank_path.empty()) artifacts["bank"] = cfg.bank_path;
    write_manifest((fs::path(cfg.out_dir) / "manifest.json").string(), "train",
                   config_echo(cfg), artifacts);
  }
  std::cout << "steps: " << result.metrics.size()
            << "  final eval success: " << result.final_eval_success << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& task, int n, int repeats,
             uint64_t seed, const std::string& out_path,
             const std::vector<std::string>& sets) {
  auto kind = task_kind_from_string(task);
  if (!kind) throw ConfigError("unknown task: " + task);
  std::vector<std::string> all_sets = {"task=" + task};
  all_sets.insert(all_sets.end(), sets.begin(), sets.end());
  TrainConfig cfg = config_from_sets(all_sets);
  PolicyParams params = load_any_policy(checkpoint);
  EvalResult result = evaluate(params, *kind, cfg.task_cfg, n, repeats, cfg.eval_sampling,
                               seed, cfg.system_prompt, cfg.reward, cfg.workers);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    for (const auto& rec : result.records) {
      ordered_json j;
      j["seed"] = rec.seed;
      j["response"] = rec.response;
      j["extracted"] = rec.extracted;
      j["score"] = rec.score;
      out << j.dump() << '\n';
    }
    std::map<std::string, std::string> meta = config_echo(cfg);
    meta["eval.n"] = std::to_string(n);
    meta["eval.seed"] = std::to_string(seed);
    meta["eval.checkpoint"] = checkpoint;
    write_manifest(out_path + ".manifest.json", "eval", meta, {{"report", out_path}});
  }
  std::cout << "success rate: " << result.success_rate << " over " << n << "x" << repeats
            << " problems\n";
  return 0;
}

int cmd_preset(const std::string& name, const PresetOptions& opts) {
  if (name == "all") {
    bool all_pass = true;
    for (const auto& preset : preset_names()) {
      PresetVerdict v = run_preset(preset, opts);
      std::cout << v.preset << ": "
                << (v.inconclusive ? "INCONCLUSIVE" : (v.pass ? "PASS" : "FAIL")) << "\n"
                << v.details << "\n";
      if (v.inconclusive) return 3;
      all_pass = all_pass && v.pass;
    }
    return all_pass ? 0 : 4;
  }
  PresetVerdict v = run_preset(name, opts);
  std::cout << v.preset << ": "
            << (v.inconclusive ? "INCONCLUSIVE" : (v.pass ? "PASS" : "FAIL")) << "\n"
            << v.details << "\n";
  if (v.inconclusive) return 3;
  return v.pass ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-bootstrapped RL laboratory"};
  app.require_subcommand(1);

  std::string task, out_path, config_path, resume, checkpoint, preset_name;
  int n = 100, size = 20, repeats = 3, steps = 500;
  uint64_t seed = 0;
  double p_start = 0.5, p_end = 0.0;
  std::vector<std::string> sets;
  PresetOptions preset_opts;
  bool no_reuse = false;

  auto* gen = app.add_subcommand("gen", "Generate a verifiable task dataset");
  gen->add_option("--task", task, "Task kind")->required();
  gen->add_option("--n", n, "Number of instances")->required();
  gen->add_option("--seed", seed, "Master seed");
  gen->add_option("--out", out_path, "Output dataset path")->required();
  gen->add_option("--set", sets, "Config overrides key=value");

  auto* bank = app.add_subcommand("bank", "Build a solved few-shot bank");
  bank->add_option("--task", task, "Task kind")->required();
  bank->add_option("--size", size, "Number of entries");
  bank->add_option("--seed", seed, "Master seed");
  bank->add_option("--out", out_path, "Output bank path")->required();
  bank->add_option("--set", sets, "Config overrides key=value");

  auto* sched = app.add_subcommand("schedule", "Print the injection probability table");
  sched->add_option("--p-start", p_start, "Start probability")->required();
  sched->add_option("--p-end", p_end, "End probability")->required();
  sched->add_option("--steps", steps, "Total steps")->required();

  auto* train_cmd = app.add_subcommand("train", "Run the training loop");
  train_cmd->add_option("--config", config_path, "key=value config file");
  train_cmd->add_option("--set", sets, "Config overrides key=value");
  train_cmd->add_option("--resume", resume, "Trainer checkpoint to resume from");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on held-out problems");
  eval_cmd->add_option("--checkpoint", checkpoint, "Policy or trainer checkpoint")->required();
  eval_cmd->add_option("--task", task, "Task kind")->required();
  eval_cmd->add_option("--n", n, "Problems");
  eval_cmd->add_option("--repeats", repeats, "Sampling repeats");
  eval_cmd->add_option("--seed", seed, "Master seed");
  eval_cmd->add_option("--out", out_path, "Per-instance report path");
  eval_cmd->add_option("--set", sets, "Config overrides key=value");

  auto* preset = app.add_subcommand("preset", "Run a packaged experiment preset");
  preset->add_option("--name", preset_name, "Preset name or 'all'")->required();
  preset->add_option("--out", preset_opts.out_dir, "Output directory")->required();
  preset->add_option("--seeds", preset_opts.n_seeds, "Seeds per arm");
  preset->add_option("--jobs", preset_opts.jobs, "Parallel runs");
  preset->add_option("--set", preset_opts.base_overrides, "Base config overrides");
  preset->add_flag("--no-reuse", no_reuse, "Ignore finished run directories");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(task, n, seed, out_path, sets);
    if (bank->parsed()) return cmd_bank(task, size, seed, out_path, sets);
    if (sched->parsed()) return cmd_schedule(p_start, p_end, steps);
    if (train_cmd->parsed()) return cmd_train(config_path, sets, resume);
    if (eval_cmd->parsed()) return cmd_eval(checkpoint, task, n, repeats, seed, out_path, sets);
    if (preset->parsed()) {
      preset_opts.reuse_existing = !no_reuse;
      return cmd_preset(preset_name, preset_opts);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
