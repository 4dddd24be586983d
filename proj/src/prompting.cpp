#include "cbrl/prompting.hpp"

#include "cbrl/errors.hpp"
#include "cbrl/text.hpp"

namespace cbrl {

const std::string& default_system_prompt() {
  static const std::string prompt =
      "A conversation between User and Assistant. The user asks a\n"
      "question, and the Assistant solves it. The assistant first\n"
      "thinks about the reasoning process in the mind and then\n"
      "provides the user with the answer. The reasoning process\n"
      "and answer are enclosed within <think> </think> and\n"
      "<answer> </answer> tags, respectively, i.e.,\n"
      "\n"
      "<think> reasoning process here </think>\n"
      "<answer>answer here</answer>\n"
      "\n"
      "Do not explain your reasoning inside the answer tags,\n"
      "provide only the final answer. When an example is provided,\n"
      "you should strictly follow the format of the output/answer\n"
      "in that example.";
  return prompt;
}

const std::string& minimal_system_prompt() {
  static const std::string prompt =
      "Reply as: <think>reasoning</think><answer>final answer</answer>";
  return prompt;
}

ChatPrompt compose(const std::string& query, const std::vector<BankEntry>& exemplars,
                   bool inject, const std::string& system_prompt) {
  if (system_prompt.empty()) throw ConfigError("compose: system prompt must be non-empty");
  ChatPrompt prompt;
  prompt.turns.push_back({Role::system, system_prompt});
  if (inject) {
    for (const auto& e : exemplars) {
      prompt.turns.push_back({Role::user, e.question});
      prompt.turns.push_back({Role::assistant, "<think>" + e.reasoning + "</think>" +
                                                   "<answer>" + e.answer + "</answer>"});
    }
  }
  prompt.turns.push_back({Role::user, query});
  return prompt;
}

std::optional<std::string> extract_answer(const std::string& response) {
  static const std::string open = "<answer>";
  static const std::string close = "</answer>";
  std::optional<std::string> found;
  size_t pos = 0;
  while (true) {
    size_t o = response.find(open, pos);
    if (o == std::string::npos) break;
    size_t c = response.find(close, o + open.size());
    if (c == std::string::npos) break;
    found = trim(response.substr(o + open.size(), c - o - open.size()));
    pos = o + open.size();
  }
  return found;
}

double format_reward(const std::string& response) {
  static const std::string t_open = "<think>";
  static const std::string t_close = "</think>";
  static const std::string a_open = "<answer>";
  static const std::string a_close = "</answer>";
  auto find_single = [&](const std::string& tag) -> std::optional<size_t> {
    size_t first = response.find(tag);
    if (first == std::string::npos) return std::nullopt;
    if (response.find(tag, first + tag.size()) != std::string::npos) return std::nullopt;
    return first;
  };
  auto to_pos = find_single(t_open);
  auto tc_pos = find_single(t_close);
  auto ao_pos = find_single(a_open);
  auto ac_pos = find_single(a_close);
  if (!to_pos || !tc_pos || !ao_pos || !ac_pos) return 0.0;
  if (!(*to_pos < *tc_pos && *tc_pos < *ao_pos && *ao_pos < *ac_pos)) return 0.0;
  for (size_t i = *ac_pos + a_close.size(); i < response.size(); ++i) {
    char c = response[i];
    if (c != ' ' && c != '\t' && c != '\n' && c != '\r') return 0.0;
  }
  return 0.2;
}

double total_reward(const TaskInstance& instance, const std::string& response,
                    const RewardSpec& spec) {
  double reward = format_reward(response) == 0.0 ? 0.0 : spec.format_bonus;
  if (auto answer = extract_answer(response))
    reward += spec.answer_reward * verify(instance, *answer);
  return reward;
}

double test_pass_reward(int passed, int total, double base_weight, double perfect_bonus) {
  if (total < 1 || passed < 0 || passed > total)
    throw ConfigError("test_pass_reward: counts out of range");
  double reward = (static_cast<double>(passed) / static_cast<double>(total)) * base_weight;
  if (passed == total) reward += perfect_bonus;
  return reward;
}

}  // namespace cbrl
