#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "cbrl/errors.hpp"
#include "cbrl/prompting.hpp"

using namespace cbrl;

namespace {

std::vector<BankEntry> two_exemplars() {
  BankEntry e1{"What is 1+1?", "adding one and one", "2", {"math"}};
  BankEntry e2{"Spell dog backward.", "d-o-g reversed", "god", {"spell"}};
  return {e1, e2};
}

}  // namespace

TEST_CASE("compose shapes") {
  auto ex = two_exemplars();
  ChatPrompt plain = compose("solve this", ex, false, "sys");
  REQUIRE(plain.turns.size() == 2);
  CHECK(plain.turns[0].role == Role::system);
  CHECK(plain.turns[0].content == "sys");
  CHECK(plain.turns[1].role == Role::user);
  CHECK(plain.turns[1].content == "solve this");

  ChatPrompt injected = compose("solve this", ex, true, "sys");
  REQUIRE(injected.turns.size() == 6);
  CHECK(injected.turns[1].role == Role::user);
  CHECK(injected.turns[1].content == ex[0].question);
  CHECK(injected.turns[2].role == Role::assistant);
  CHECK(injected.turns[2].content ==
        "<think>adding one and one</think><answer>2</answer>");
  CHECK(injected.turns[3].content == ex[1].question);
  CHECK(injected.turns[4].content == "<think>d-o-g reversed</think><answer>god</answer>");
  CHECK(injected.turns[5].role == Role::user);
  CHECK(injected.turns[5].content == "solve this");

  ChatPrompt degenerate = compose("solve this", {}, true, "sys");
  CHECK(degenerate.turns.size() == 2);

  CHECK_THROWS_AS(compose("q", ex, false, ""), ConfigError);
}

TEST_CASE("extract_answer picks the last well-formed block") {
  CHECK(extract_answer("<think>x</think><answer>42</answer>") == "42");
  CHECK(!extract_answer("no tags here").has_value());
  CHECK(extract_answer("<answer>a</answer><answer>b</answer>") == "b");
  CHECK(extract_answer("<answer> padded \n</answer>") == "padded");
  CHECK(extract_answer("<answer>a</answer><answer>unclosed") == "a");
  CHECK(!extract_answer("<answer>unclosed").has_value());
}

TEST_CASE("format_reward is a strict predicate") {
  CHECK(format_reward("<think>r</think><answer>a</answer>") == 0.2);
  CHECK(format_reward("<think>r</think><answer>a</answer>  \n\t") == 0.2);
  CHECK(format_reward("<answer>a</answer>") == 0.0);
  CHECK(format_reward("<think>r</think>") == 0.0);
  CHECK(format_reward("<think>r</think><answer>a</answer> trailing words") == 0.0);
  CHECK(format_reward("<answer>a</answer><think>r</think>") == 0.0);
  CHECK(format_reward("<think>r</think><think>s</think><answer>a</answer>") == 0.0);
  CHECK(format_reward("<think>r</think><answer>a</answer><answer>b</answer>") == 0.0);
  CHECK(format_reward("") == 0.0);
}

TEST_CASE("total_reward composes format and answer components") {
  TaskDetail d = SpellBackwardDetail{"cat"};
  TaskInstance inst;
  inst.kind = TaskKind::spell_backward;
  inst.prompt = render_prompt(inst.kind, d);
  inst.answer = canonical_answer(inst.kind, d);
  RewardSpec spec;
  CHECK(total_reward(inst, "<think>reverse it</think><answer>tac</answer>", spec) == 1.2);
  CHECK(total_reward(inst, "<think>reverse it</think><answer>cat</answer>", spec) == 0.2);
  CHECK(total_reward(inst, "tac", spec) == 0.0);
  // Extractable but unformatted: the answer component still scores.
  CHECK(total_reward(inst, "sure! <answer>tac</answer> hope that helps", spec) == 1.0);
}

TEST_CASE("reachable reward set under the default spec") {
  TaskDetail d = SpellBackwardDetail{"cat"};
  TaskInstance inst;
  inst.kind = TaskKind::spell_backward;
  inst.prompt = render_prompt(inst.kind, d);
  inst.answer = canonical_answer(inst.kind, d);
  RewardSpec spec;
  std::set<double> seen;
  const std::string correct = "tac", wrong = "cat";
  std::vector<std::string> responses;
  for (const std::string& ans : {correct, wrong}) {
    responses.push_back("<think>r</think><answer>" + ans + "</answer>");      // well-formed
    responses.push_back("<answer>" + ans + "</answer>");                      // missing think
    responses.push_back("<think>r</think><answer>" + ans + "</answer> tail"); // trailing
    responses.push_back(ans);                                                 // raw text
    responses.push_back("<think>" + ans + "</think>");                        // no answer
  }
  responses.push_back("");
  responses.push_back("<think></think><answer></answer>");
  for (const auto& r : responses) seen.insert(total_reward(inst, r, spec));
  // Malformed-but-extractable responses can reach 1.0, so the strict-format
  // matrix spans exactly these values.
  for (double v : seen) CHECK((v == 0.0 || v == 0.2 || v == 1.0 || v == 1.2));
  CHECK(seen.count(0.0) == 1);
  CHECK(seen.count(0.2) == 1);
  CHECK(seen.count(1.2) == 1);
}

TEST_CASE("reward ignores prompt composition") {
  TaskDetail d = SpellBackwardDetail{"dog"};
  TaskInstance inst;
  inst.kind = TaskKind::spell_backward;
  inst.prompt = render_prompt(inst.kind, d);
  inst.answer = canonical_answer(inst.kind, d);
  // Reward is a function of (instance, response) only; composing with or
  // without exemplars cannot change it.
  ChatPrompt with = compose(inst.prompt, two_exemplars(), true, "sys");
  ChatPrompt without = compose(inst.prompt, {}, false, "sys");
  CHECK(with.turns.back().content == without.turns.back().content);
  std::string response = "<think>…</think><answer>god</answer>";
  CHECK(total_reward(inst, response, {}) == total_reward(inst, response, {}));
}

TEST_CASE("test_pass_reward matches the partial-credit formula") {
  CHECK(test_pass_reward(2, 5, 1.0, 2.0) == doctest::Approx(0.4));
  CHECK(test_pass_reward(5, 5, 1.0, 2.0) == doctest::Approx(3.0));
  CHECK(test_pass_reward(0, 5, 1.0, 2.0) == 0.0);
  CHECK(test_pass_reward(3, 4, 0.5, 1.0) == doctest::Approx(0.375));
  CHECK_THROWS_AS(test_pass_reward(6, 5), ConfigError);
  CHECK_THROWS_AS(test_pass_reward(-1, 5), ConfigError);
  CHECK_THROWS_AS(test_pass_reward(0, 0), ConfigError);
}
