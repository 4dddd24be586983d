#include "cbrl/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "cbrl/errors.hpp"
#include "cbrl/text.hpp"

namespace cbrl {

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    size_t eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + s);
    kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
  }
}

std::string resolve_system_prompt(const std::string& spec) {
  if (spec.empty() || spec == "deepseek_zero") return default_system_prompt();
  if (spec == "minimal") return minimal_system_prompt();
  if (spec.size() > 1 && spec[0] == '@') {
    std::ifstream in(spec.substr(1));
    if (!in) throw ConfigError("cannot open system prompt file: " + spec.substr(1));
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    if (text.empty()) throw ConfigError("system prompt file is empty");
    return text;
  }
  throw ConfigError("system_prompt must be deepseek_zero, minimal, or @<path>");
}

namespace {

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string format_double_cfg(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

TrainConfig parse_train_config(const std::map<std::string, std::string>& kv) {
  TrainConfig cfg;
  std::string system_prompt_spec = "deepseek_zero";

  // Handlers per documented key.
  std::map<std::string, std::function<void(const std::string&, const std::string&)>> handlers;
  auto set_int = [&](int& slot) {
    return [&slot](const std::string& k, const std::string& v) {
      slot = static_cast<int>(parse_int(k, v));
    };
  };
  auto set_double = [&](double& slot) {
    return [&slot](const std::string& k, const std::string& v) { slot = parse_double(k, v); };
  };
  auto set_bool = [&](bool& slot) {
    return [&slot](const std::string& k, const std::string& v) { slot = parse_bool(k, v); };
  };

  handlers["task"] = [&](const std::string& k, const std::string& v) {
    auto kind = task_kind_from_string(v);
    if (!kind) throw ConfigError("config key '" + k + "': unknown task '" + v + "'");
    cfg.task = *kind;
  };
  handlers["master_seed"] = [&](const std::string& k, const std::string& v) {
    cfg.master_seed = static_cast<uint64_t>(parse_int(k, v));
  };
  handlers["total_steps"] = set_int(cfg.total_steps);
  handlers["batch_size"] = set_int(cfg.batch_size);
  handlers["algorithm"] = [&](const std::string& k, const std::string& v) {
    if (v == "grpo")
      cfg.rl.algorithm = Algorithm::grpo;
    else if (v == "rloo")
      cfg.rl.algorithm = Algorithm::rloo;
    else
      throw ConfigError("config key '" + k + "': expected grpo or rloo");
  };
  handlers["group_size"] = set_int(cfg.rl.group_size);
  handlers["p_start"] = set_double(cfg.schedule.p_start);
  handlers["p_end"] = set_double(cfg.schedule.p_end);
  handlers["k_examples"] = set_int(cfg.k_examples);
  handlers["bank_path"] = [&](const std::string&, const std::string& v) { cfg.bank_path = v; };
  handlers["bank_sampling"] = [&](const std::string& k, const std::string& v) {
    if (v == "uniform")
      cfg.bank_sampling = BankSamplingMode::uniform;
    else if (v == "tags")
      cfg.bank_sampling = BankSamplingMode::tags;
    else
      throw ConfigError("config key '" + k + "': expected uniform or tags");
  };
  handlers["clip_eps"] = set_double(cfg.rl.clip_eps);
  handlers["kl_coef"] = set_double(cfg.rl.kl_coef);
  handlers["entropy_coef"] = set_double(cfg.rl.entropy_coef);
  handlers["grad_clip_norm"] = set_double(cfg.rl.grad_clip_norm);
  handlers["std_eps"] = set_double(cfg.rl.std_eps);
  handlers["lr"] = set_double(cfg.rl.lr);
  handlers["ppo_epochs"] = set_int(cfg.rl.ppo_epochs);
  handlers["minibatch_groups"] = set_int(cfg.rl.minibatch_groups);
  handlers["advantage_norm"] = [&](const std::string& k, const std::string& v) {
    if (v == "std")
      cfg.rl.advantage_norm = AdvantageNorm::std_norm;
    else if (v == "mean_only")
      cfg.rl.advantage_norm = AdvantageNorm::mean_only;
    else
      throw ConfigError("config key '" + k + "': expected std or mean_only");
  };
  handlers["adam_beta1"] = set_double(cfg.rl.adam_beta1);
  handlers["adam_beta2"] = set_double(cfg.rl.adam_beta2);
  handlers["adam_eps"] = set_double(cfg.rl.adam_eps);
  handlers["policy.d"] = set_int(cfg.policy.d_model);
  handlers["policy.layers"] = set_int(cfg.policy.n_layers);
  handlers["policy.heads"] = set_int(cfg.policy.n_heads);
  handlers["policy.context"] = set_int(cfg.policy.context);
  handlers["max_new_tokens"] = set_int(cfg.train_sampling.max_new_tokens);
  handlers["train.temperature"] = set_double(cfg.train_sampling.temperature);
  handlers["train.top_p"] = set_double(cfg.train_sampling.top_p);
  handlers["eval.temperature"] = set_double(cfg.eval_sampling.temperature);
  handlers["eval.top_p"] = set_double(cfg.eval_sampling.top_p);
  handlers["eval.max_new_tokens"] = set_int(cfg.eval_sampling.max_new_tokens);
  handlers["eval.every"] = set_int(cfg.eval_every);
  handlers["eval.problems"] = set_int(cfg.eval_problems);
  handlers["eval.repeats"] = set_int(cfg.eval_repeats);
  handlers["checkpoint.every"] = set_int(cfg.checkpoint_every);
  handlers["out_dir"] = [&](const std::string&, const std::string& v) { cfg.out_dir = v; };
  handlers["system_prompt"] = [&](const std::string&, const std::string& v) {
    system_prompt_spec = v;
  };
  handlers["injection_enabled"] = set_bool(cfg.injection_enabled);
  handlers["workers"] = set_int(cfg.workers);
  handlers["strict_sequential"] = set_bool(cfg.strict_sequential);
  handlers["reward.format_bonus"] = set_double(cfg.reward.format_bonus);
  handlers["reward.answer"] = set_double(cfg.reward.answer_reward);
  // per-task generator parameters
  handlers["task.min_size"] = set_int(cfg.task_cfg.arc1d.min_size);
  handlers["task.max_size"] = set_int(cfg.task_cfg.arc1d.max_size);
  handlers["task.num_train"] = set_int(cfg.task_cfg.arc1d.num_train);
  handlers["task.min_rows"] = set_int(cfg.task_cfg.matrix.min_rows);
  handlers["task.max_rows"] = set_int(cfg.task_cfg.matrix.max_rows);
  handlers["task.min_cols"] = set_int(cfg.task_cfg.matrix.min_cols);
  handlers["task.max_cols"] = set_int(cfg.task_cfg.matrix.max_cols);
  handlers["task.min_transforms"] = set_int(cfg.task_cfg.matrix.min_transforms);
  handlers["task.max_transforms"] = set_int(cfg.task_cfg.matrix.max_transforms);
  handlers["task.min_words"] = set_int(cfg.task_cfg.word_sorting.min_words);
  handlers["task.max_words"] = set_int(cfg.task_cfg.word_sorting.max_words);
  handlers["task.min_word_length"] = set_int(cfg.task_cfg.word_sorting.min_word_length);
  handlers["task.max_word_length"] = set_int(cfg.task_cfg.word_sorting.max_word_length);
  handlers["task.min_word_len"] = set_int(cfg.task_cfg.spell_backward.min_word_len);
  handlers["task.max_word_len"] = set_int(cfg.task_cfg.spell_backward.max_word_len);
  handlers["task.min_value"] = set_int(cfg.task_cfg.puzzle24.min_value);
  handlers["task.max_value"] = set_int(cfg.task_cfg.puzzle24.max_value);
  handlers["task.operators"] = [&](const std::string&, const std::string& v) {
    cfg.task_cfg.puzzle24.operators = v;
  };

  for (const auto& [key, value] : kv) {
    auto it = handlers.find(key);
    if (it == handlers.end()) throw ConfigError("unknown config key: " + key);
    it->second(key, value);
  }

  cfg.system_prompt = resolve_system_prompt(system_prompt_spec);
  cfg.schedule.total_steps = cfg.total_steps;
  if (const char* env = std::getenv("CBRL_OUT_DIR"); env && *env) cfg.out_dir = env;
  return cfg;
}

std::map<std::string, std::string> config_echo(const TrainConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["task"] = to_string(cfg.task);
  kv["master_seed"] = std::to_string(cfg.master_seed);
  kv["total_steps"] = std::to_string(cfg.total_steps);
  kv["batch_size"] = std::to_string(cfg.batch_size);
  kv["algorithm"] = to_string(cfg.rl.algorithm);
  kv["group_size"] = std::to_string(cfg.rl.group_size);
  kv["p_start"] = format_double_cfg(cfg.schedule.p_start);
  kv["p_end"] = format_double_cfg(cfg.schedule.p_end);
  kv["k_examples"] = std::to_string(cfg.k_examples);
  kv["bank_path"] = cfg.bank_path;
  kv["bank_sampling"] = cfg.bank_sampling == BankSamplingMode::uniform ? "uniform" : "tags";
  kv["clip_eps"] = format_double_cfg(cfg.rl.clip_eps);
  kv["kl_coef"] = format_double_cfg(cfg.rl.kl_coef);
  kv["entropy_coef"] = format_double_cfg(cfg.rl.entropy_coef);
  kv["grad_clip_norm"] = format_double_cfg(cfg.rl.grad_clip_norm);
  kv["std_eps"] = format_double_cfg(cfg.rl.std_eps);
  kv["lr"] = format_double_cfg(cfg.rl.lr);
  kv["ppo_epochs"] = std::to_string(cfg.rl.ppo_epochs);
  kv["minibatch_groups"] = std::to_string(cfg.rl.minibatch_groups);
  kv["advantage_norm"] =
      cfg.rl.advantage_norm == AdvantageNorm::std_norm ? "std" : "mean_only";
  kv["adam_beta1"] = format_double_cfg(cfg.rl.adam_beta1);
  kv["adam_beta2"] = format_double_cfg(cfg.rl.adam_beta2);
  kv["adam_eps"] = format_double_cfg(cfg.rl.adam_eps);
  kv["policy.d"] = std::to_string(cfg.policy.d_model);
  kv["policy.layers"] = std::to_string(cfg.policy.n_layers);
  kv["policy.heads"] = std::to_string(cfg.policy.n_heads);
  kv["policy.context"] = std::to_string(cfg.policy.context);
  kv["max_new_tokens"] = std::to_string(cfg.train_sampling.max_new_tokens);
  kv["train.temperature"] = format_double_cfg(cfg.train_sampling.temperature);
  kv["train.top_p"] = format_double_cfg(cfg.train_sampling.top_p);
  kv["eval.temperature"] = format_double_cfg(cfg.eval_sampling.temperature);
  kv["eval.top_p"] = format_double_cfg(cfg.eval_sampling.top_p);
  kv["eval.max_new_tokens"] = std::to_string(cfg.eval_sampling.max_new_tokens);
  kv["eval.every"] = std::to_string(cfg.eval_every);
  kv["eval.problems"] = std::to_string(cfg.eval_problems);
  kv["eval.repeats"] = std::to_string(cfg.eval_repeats);
  kv["checkpoint.every"] = std::to_string(cfg.checkpoint_every);
  kv["out_dir"] = cfg.out_dir;
  if (cfg.system_prompt == default_system_prompt())
    kv["system_prompt"] = "deepseek_zero";
  else if (cfg.system_prompt == minimal_system_prompt())
    kv["system_prompt"] = "minimal";
  else
    kv["system_prompt"] = "<custom>";
  kv["injection_enabled"] = cfg.injection_enabled ? "true" : "false";
  kv["workers"] = std::to_string(cfg.workers);
  kv["strict_sequential"] = cfg.strict_sequential ? "true" : "false";
  kv["reward.format_bonus"] = format_double_cfg(cfg.reward.format_bonus);
  kv["reward.answer"] = format_double_cfg(cfg.reward.answer_reward);
  kv["task.min_size"] = std::to_string(cfg.task_cfg.arc1d.min_size);
  kv["task.max_size"] = std::to_string(cfg.task_cfg.arc1d.max_size);
  kv["task.num_train"] = std::to_string(cfg.task_cfg.arc1d.num_train);
  kv["task.min_rows"] = std::to_string(cfg.task_cfg.matrix.min_rows);
  kv["task.max_rows"] = std::to_string(cfg.task_cfg.matrix.max_rows);
  kv["task.min_cols"] = std::to_string(cfg.task_cfg.matrix.min_cols);
  kv["task.max_cols"] = std::to_string(cfg.task_cfg.matrix.max_cols);
  kv["task.min_transforms"] = std::to_string(cfg.task_cfg.matrix.min_transforms);
  kv["task.max_transforms"] = std::to_string(cfg.task_cfg.matrix.max_transforms);
  kv["task.min_words"] = std::to_string(cfg.task_cfg.word_sorting.min_words);
  kv["task.max_words"] = std::to_string(cfg.task_cfg.word_sorting.max_words);
  kv["task.min_word_length"] = std::to_string(cfg.task_cfg.word_sorting.min_word_length);
  kv["task.max_word_length"] = std::to_string(cfg.task_cfg.word_sorting.max_word_length);
  kv["task.min_word_len"] = std::to_string(cfg.task_cfg.spell_backward.min_word_len);
  kv["task.max_word_len"] = std::to_string(cfg.task_cfg.spell_backward.max_word_len);
  kv["task.min_value"] = std::to_string(cfg.task_cfg.puzzle24.min_value);
  kv["task.max_value"] = std::to_string(cfg.task_cfg.puzzle24.max_value);
  kv["task.operators"] = cfg.task_cfg.puzzle24.operators;
  return kv;
}

std::vector<std::string> config_diff(const TrainConfig& a, const TrainConfig& b) {
  auto ea = config_echo(a);
  auto eb = config_echo(b);
  std::vector<std::string> keys;
  for (const auto& [k, v] : ea)
    if (eb.at(k) != v) keys.push_back(k);
  return keys;
}

}  // namespace cbrl
