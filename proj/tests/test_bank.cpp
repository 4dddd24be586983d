#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "cbrl/bank.hpp"
#include "cbrl/errors.hpp"
#include "cbrl/seeds.hpp"

using namespace cbrl;

namespace {

Bank tiny_bank(std::vector<std::pair<std::string, std::vector<std::string>>> entries) {
  Bank bank;
  int i = 0;
  for (auto& [q, tags] : entries) {
    BankEntry e;
    e.question = q;
    e.reasoning = "r" + std::to_string(i);
    e.answer = "a" + std::to_string(i);
    e.tags = tags;
    bank.entries.push_back(e);
    ++i;
  }
  return bank;
}

}  // namespace

TEST_CASE("build_bank produces verified entries with traces") {
  TaskConfig cfg;
  Bank bank = build_bank(TaskKind::spell_backward, 20, 7, cfg);
  CHECK(bank.entries.size() == 20);
  for (const auto& e : bank.entries) {
    CHECK(!e.question.empty());
    CHECK(!e.answer.empty());
    CHECK(!e.reasoning.empty());
    CHECK(e.tags[0] == "spell_backward");
    // The trace enumerates the reversed characters and ends with the answer.
    CHECK(e.reasoning.find("reverse order") != std::string::npos);
    CHECK(e.reasoning.find(e.answer) != std::string::npos);
  }
  // Deterministic rebuild.
  Bank again = build_bank(TaskKind::spell_backward, 20, 7, cfg);
  for (size_t i = 0; i < 20; ++i) {
    CHECK(bank.entries[i].question == again.entries[i].question);
    CHECK(bank.entries[i].reasoning == again.entries[i].reasoning);
    CHECK(bank.entries[i].answer == again.entries[i].answer);
  }
}

TEST_CASE("word sorting traces list first-character code points") {
  TaskConfig cfg;
  Bank bank = build_bank(TaskKind::word_sorting, 5, 3, cfg);
  for (const auto& e : bank.entries) {
    CHECK(e.reasoning.find("code points") != std::string::npos);
    CHECK(e.reasoning.find('=') != std::string::npos);
  }
}

TEST_CASE("bank entries come from the bank seed region") {
  TaskConfig cfg;
  uint64_t master = 11;
  Bank bank = build_bank(TaskKind::spell_backward, 20, master, cfg);
  std::set<std::string> bank_questions;
  for (const auto& e : bank.entries) bank_questions.insert(e.question);
  // Training instances from the same master seed never collide with bank
  // entries (disjoint seed offsets).
  for (uint64_t i = 0; i < 200; ++i) {
    TaskInstance inst = generate(TaskKind::spell_backward, seeds::train_seed(master, i), cfg);
    CHECK(bank_questions.count(inst.prompt) == 0);
  }
}

TEST_CASE("sample_uniform basics") {
  Bank bank = tiny_bank({{"q0", {"x"}}, {"q1", {"x"}}, {"q2", {"x"}}});
  RngStream rng = RngStream::substream(5, 1);
  CHECK(sample_uniform(bank, 0, rng).empty());

  RngStream a = RngStream::substream(5, 2);
  RngStream b = RngStream::substream(5, 2);
  auto s1 = sample_uniform(bank, 2, a);
  auto s2 = sample_uniform(bank, 2, b);
  REQUIRE(s1.size() == 2);
  CHECK(s1[0].question == s2[0].question);
  CHECK(s1[1].question == s2[1].question);
  CHECK(s1[0].question != s1[1].question);

  auto all = sample_uniform(bank, 10, rng);
  CHECK(all.size() == 3);

  Bank empty;
  CHECK_THROWS_AS(sample_uniform(empty, 2, rng), RunError);
  CHECK(sample_uniform(empty, 0, rng).empty());
}

TEST_CASE("single-entry bank caps a k=2 draw at one entry") {
  Bank bank = tiny_bank({{"only", {"t"}}});
  RngStream rng(3);
  auto s = sample_uniform(bank, 2, rng);
  REQUIRE(s.size() == 1);
  CHECK(s[0].question == "only");
}

TEST_CASE("uniform sampling frequencies stay within 3 sigma") {
  TaskConfig cfg;
  Bank bank = build_bank(TaskKind::spell_backward, 20, 1, cfg);
  RngStream rng = RngStream::substream(1, 500);
  std::map<std::string, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto s = sample_uniform(bank, 1, rng);
    counts[s[0].question] += 1;
  }
  double p = 1.0 / 20.0;
  double sigma = std::sqrt(p * (1 - p) / draws);
  for (const auto& e : bank.entries) {
    double rate = counts[e.question] / static_cast<double>(draws);
    CHECK(std::abs(rate - p) < 3.0 * sigma);
  }
}

TEST_CASE("tag filtering restricts candidates and falls back when empty") {
  Bank bank = tiny_bank({{"q0", {"Array"}},
                         {"q1", {"Array", "DP"}},
                         {"q2", {"Array"}},
                         {"q3", {"Graph"}},
                         {"q4", {"Graph"}}});
  RngStream rng = RngStream::substream(9, 1);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = sample_by_tags(bank, 2, {"Array"}, rng);
    REQUIRE(s.size() == 2);
    for (const auto& e : s) {
      bool tagged = false;
      for (const auto& t : e.tags) tagged |= (t == "Array");
      CHECK(tagged);
    }
    CHECK(s[0].question != s[1].question);
  }
  // k above the candidate count returns every candidate.
  auto all_graph = sample_by_tags(bank, 5, {"Graph"}, rng);
  CHECK(all_graph.size() == 2);
  // Disjoint query tags fall back to uniform over the full bank.
  std::set<std::string> seen;
  for (int trial = 0; trial < 200; ++trial) {
    auto s = sample_by_tags(bank, 1, {"NoSuchTag"}, rng);
    REQUIRE(s.size() == 1);
    seen.insert(s[0].question);
  }
  CHECK(seen.size() == 5);
}

TEST_CASE("bank persistence round-trips field for field") {
  TaskConfig cfg;
  Bank bank = build_bank(TaskKind::puzzle24, 8, 2, cfg);
  auto path = std::filesystem::temp_directory_path() / "cbrl_test_bank.jsonl";
  save_bank(path.string(), bank);
  Bank loaded = load_bank(path.string());
  REQUIRE(loaded.entries.size() == bank.entries.size());
  for (size_t i = 0; i < bank.entries.size(); ++i) {
    CHECK(loaded.entries[i].question == bank.entries[i].question);
    CHECK(loaded.entries[i].reasoning == bank.entries[i].reasoning);
    CHECK(loaded.entries[i].answer == bank.entries[i].answer);
    CHECK(loaded.entries[i].tags == bank.entries[i].tags);
  }
  std::filesystem::remove(path);
}

TEST_CASE("bank size must be positive") {
  TaskConfig cfg;
  CHECK_THROWS_AS(build_bank(TaskKind::spell_backward, 0, 1, cfg), ConfigError);
}
