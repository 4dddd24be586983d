#pragma once

#include <map>
#include <string>
#include <vector>

#include "cbrl/trainer.hpp"

namespace cbrl {

// Flat key=value configuration ('#' starts a comment). Unknown keys are
// errors. The full key list lives in the README.
std::map<std::string, std::string> read_config_file(const std::string& path);

// Applies "key=value" strings (CLI --set) on top of file values.
void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& sets);

// Builds a TrainConfig over the documented defaults; throws ConfigError on
// unknown keys or unparsable values.
TrainConfig parse_train_config(const std::map<std::string, std::string>& kv);

// Canonical echo of every configuration key with its final value; feeding it
// back through parse_train_config reproduces the config.
std::map<std::string, std::string> config_echo(const TrainConfig& cfg);

// "deepseek_zero", "minimal", or "@/path/to/file".
std::string resolve_system_prompt(const std::string& spec);

// Keys whose values differ between two configs.
std::vector<std::string> config_diff(const TrainConfig& a, const TrainConfig& b);

}  // namespace cbrl
