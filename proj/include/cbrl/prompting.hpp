#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cbrl/bank.hpp"
#include "cbrl/tasks.hpp"

namespace cbrl {

enum class Role { system, user, assistant };

struct ChatTurn {
  Role role;
  std::string content;
};

// Exactly one leading system turn; exemplar pairs alternate user/assistant;
// the final turn is the target user query.
struct ChatPrompt {
  std::vector<ChatTurn> turns;
};

struct RewardSpec {
  double format_bonus = 0.2;
  double answer_reward = 1.0;
};

// The default system prompt (structured think/answer instructions) and a
// short variant for small-context runs.
const std::string& default_system_prompt();
const std::string& minimal_system_prompt();

// inject=false (or no exemplars): [system, user(query)].
// inject=true: [system, (user(q_j), assistant(<think>r_j</think><answer>a_j</answer>))..., user(query)].
ChatPrompt compose(const std::string& query, const std::vector<BankEntry>& exemplars,
                   bool inject, const std::string& system_prompt);

// Content of the last well-formed <answer>...</answer> block, trimmed.
std::optional<std::string> extract_answer(const std::string& response);

// 0.2 iff the response carries exactly one <think> block followed by exactly
// one <answer> block, with nothing but whitespace after the closing tag.
double format_reward(const std::string& response);

// format_reward + answer_reward * verify(instance, extracted answer).
double total_reward(const TaskInstance& instance, const std::string& response,
                    const RewardSpec& spec);

// Partial reward proportional to test pass rate plus a bonus for a perfect
// run: (passed/total)*base_weight + (passed==total ? perfect_bonus : 0).
// The test executor backing `passed` lives outside this module.
double test_pass_reward(int passed, int total, double base_weight = 1.0,
                        double perfect_bonus = 2.0);

}  // namespace cbrl
