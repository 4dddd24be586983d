#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <set>

#include "cbrl/errors.hpp"
#include "cbrl/tasks.hpp"
#include "cbrl/text.hpp"
#include "oracles.hpp"

using namespace cbrl;

namespace {

TaskConfig default_cfg() { return TaskConfig{}; }

bool same_instance(const TaskInstance& a, const TaskInstance& b) {
  return a.kind == b.kind && a.seed == b.seed && a.prompt == b.prompt &&
         a.answer == b.answer && a.tags == b.tags;
}

}  // namespace

TEST_CASE("generation is deterministic and self-verifying across kinds") {
  TaskConfig cfg = default_cfg();
  for (TaskKind kind : all_task_kinds()) {
    for (uint64_t seed = 0; seed < 25; ++seed) {
      TaskInstance a = generate(kind, seed, cfg);
      TaskInstance b = generate(kind, seed, cfg);
      CHECK(same_instance(a, b));
      CHECK(verify(a, a.answer) == 1.0);
      CHECK(!a.prompt.empty());
      CHECK(!a.answer.empty());
      CHECK(a.tags.size() >= 2);
      CHECK(a.tags[0] == to_string(kind));
    }
  }
}

TEST_CASE("verify tolerates whitespace but not case") {
  TaskInstance inst = generate(TaskKind::spell_backward, 3, default_cfg());
  CHECK(verify(inst, "  " + inst.answer + " \n") == 1.0);
  CHECK(verify(inst, inst.answer + " x") == 0.0);
  std::string upper = inst.answer;
  upper[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(upper[0])));
  if (upper != inst.answer) CHECK(verify(inst, upper) == 0.0);
}

TEST_CASE("spell_backward reverses the word") {
  TaskDetail d = SpellBackwardDetail{"cat"};
  CHECK(canonical_answer(TaskKind::spell_backward, d) == "tac");
  CHECK(render_prompt(TaskKind::spell_backward, d) == "Spell this word backward: cat");
}

TEST_CASE("word sorting agrees with a code-point insertion sort oracle") {
  TaskConfig cfg = default_cfg();
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    TaskDetail d = generate_detail(TaskKind::word_sorting, seed, cfg);
    const auto& ws = std::get<WordSortingDetail>(d);
    CHECK(ws.sorted == oracles::insertion_sort_codepoints(ws.words));
  }
}

TEST_CASE("ascii-order worked example scores correctly") {
  std::vector<std::string> words = {"violates", "yes",  "already", "completing", "pages",
                                    "duty",     "his",  "EXPRESS", "duly"};
  TaskInstance inst = make_word_sorting_instance(words, 0);
  CHECK(verify(inst, "EXPRESS, already, completing, duly, duty, his, pages, violates, yes") ==
        1.0);
  CHECK(verify(inst, "EXPRESS, already, completing, duty, his, violates, pages, duly, yes") ==
        0.0);
}

TEST_CASE("puzzle24 oracle on known quadruples") {
  CHECK(!solve_puzzle24_oracle({1, 1, 1, 1}).has_value());
  auto easy = solve_puzzle24_oracle({6, 6, 6, 6});
  REQUIRE(easy.has_value());
  auto hard = solve_puzzle24_oracle({3, 3, 8, 8});
  REQUIRE(hard.has_value());
  for (const auto& expr : {*easy, *hard}) {
    oracles::Rational v = oracles::ExprEval(expr).parse();
    CHECK(v.den == 1);
    CHECK(v.num == 24);
  }
  // Each input number used exactly once.
  auto leaves = oracles::expression_leaves(*hard);
  std::multiset<long long> got(leaves.begin(), leaves.end());
  CHECK(got == std::multiset<long long>({3, 3, 8, 8}));
}

TEST_CASE("puzzle24 oracle agrees with an independent reachability search") {
  // Exhaustive over every multiset of four values in [1,9].
  for (int a = 1; a <= 9; ++a)
    for (int b = a; b <= 9; ++b)
      for (int c = b; c <= 9; ++c)
        for (int d = c; d <= 9; ++d) {
          std::array<int, 4> nums = {a, b, c, d};
          auto expr = solve_puzzle24_oracle(nums);
          bool solvable = oracles::puzzle24_solvable_dp(nums);
          CHECK(expr.has_value() == solvable);
          if (expr) {
            oracles::Rational v = oracles::ExprEval(*expr).parse();
            CHECK((v.den == 1 && v.num == 24));
          }
        }
}

TEST_CASE("generated puzzle24 instances are solvable and render their numbers") {
  TaskConfig cfg = default_cfg();
  for (uint64_t seed = 0; seed < 50; ++seed) {
    TaskDetail d = generate_detail(TaskKind::puzzle24, seed, cfg);
    const auto& p = std::get<Puzzle24Detail>(d);
    oracles::Rational v = oracles::ExprEval(p.expression).parse();
    CHECK((v.den == 1 && v.num == 24));
    auto leaves = oracles::expression_leaves(p.expression);
    std::multiset<long long> used(leaves.begin(), leaves.end());
    std::multiset<long long> given(p.numbers.begin(), p.numbers.end());
    CHECK(used == given);
  }
}

TEST_CASE("matrix op worked examples") {
  Grid g = {{1, 2}, {3, 4}};
  CHECK(apply_matrix_ops(g, {{MatrixOpKind::transpose}}) == Grid{{1, 3}, {2, 4}});
  CHECK(apply_matrix_ops(g, {{MatrixOpKind::rotate90_cw},
                             {MatrixOpKind::rotate90_cw},
                             {MatrixOpKind::rotate90_cw},
                             {MatrixOpKind::rotate90_cw}}) == g);
  Grid wide = {{1, 2, 3}, {4, 5, 6}};
  CHECK(apply_matrix_ops(wide, {{MatrixOpKind::flip_horizontal}, {MatrixOpKind::transpose}}) ==
        Grid{{3, 6}, {2, 5}, {1, 4}});
}

TEST_CASE("matrix op group laws hold on random grids") {
  TaskConfig cfg = default_cfg();
  RngStream rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    int rows = static_cast<int>(rng.uniform_int(1, 6));
    int cols = static_cast<int>(rng.uniform_int(1, 6));
    Grid g(static_cast<size_t>(rows), std::vector<int>(static_cast<size_t>(cols)));
    for (auto& row : g)
      for (int& v : row) v = static_cast<int>(rng.next_below(10));
    CHECK(apply_matrix_ops(g, {{MatrixOpKind::transpose}, {MatrixOpKind::transpose}}) == g);
    CHECK(apply_matrix_ops(g, {{MatrixOpKind::flip_horizontal},
                               {MatrixOpKind::flip_horizontal}}) == g);
    CHECK(apply_matrix_ops(g, {{MatrixOpKind::flip_vertical}, {MatrixOpKind::flip_vertical}}) ==
          g);
    CHECK(apply_matrix_ops(g, {{MatrixOpKind::rotate90_cw}, {MatrixOpKind::rotate90_ccw}}) ==
          g);
    CHECK(apply_matrix_ops(g, {{MatrixOpKind::rotate180}, {MatrixOpKind::rotate180}}) == g);
  }
  (void)cfg;
}

TEST_CASE("matrix slice errors on out-of-range indices") {
  Grid g = {{1, 2}, {3, 4}};
  CHECK_THROWS_AS(apply_matrix_ops(g, {{MatrixOpKind::row_slice, 0, 3}}), RunError);
  CHECK_THROWS_AS(apply_matrix_ops(g, {{MatrixOpKind::col_slice, 2, 1}}), RunError);
}

TEST_CASE("generated matrix instances apply their op list") {
  TaskConfig cfg = default_cfg();
  for (uint64_t seed = 0; seed < 100; ++seed) {
    TaskDetail d = generate_detail(TaskKind::manipulate_matrix, seed, cfg);
    const auto& m = std::get<MatrixDetail>(d);
    CHECK(apply_matrix_ops(m.grid, m.ops) == m.result);
    CHECK(!m.result.empty());
    CHECK(!m.result[0].empty());
  }
}

namespace {

// A single (direction, k) shift explaining a pair, if any.
bool shift_explains(const std::vector<int>& in, const std::vector<int>& out, bool left, int k) {
  int len = static_cast<int>(in.size());
  for (int i = 0; i < len; ++i) {
    int src = left ? i + k : i - k;
    int expect = (src >= 0 && src < len) ? in[static_cast<size_t>(src)] : 0;
    if (out[static_cast<size_t>(i)] != expect) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("arc1d rules produce consistent transformations") {
  TaskConfig cfg = default_cfg();
  int rules_seen = 0;
  std::set<std::string> names;
  for (uint64_t seed = 0; seed < 300; ++seed) {
    TaskDetail d = generate_detail(TaskKind::arc1d, seed, cfg);
    const auto& arc = std::get<Arc1dDetail>(d);
    names.insert(arc.rule_name);
    CHECK(static_cast<int>(arc.train.size()) == cfg.arc1d.num_train);
    std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs = arc.train;
    pairs.emplace_back(arc.test_input, arc.test_output);
    for (const auto& [in, out] : pairs) {
      CHECK(in.size() == out.size());
      for (int v : out) {
        CHECK(v >= 0);
        CHECK(v <= 9);
      }
      if (arc.rule_name == "mirror") {
        std::vector<int> rev(in.rbegin(), in.rend());
        CHECK(out == rev);
      } else if (arc.rule_name == "shift_left" || arc.rule_name == "shift_right") {
        bool left = arc.rule_name == "shift_left";
        bool ok = false;
        for (int k = 1; k <= 3 && !ok; ++k) ok = shift_explains(in, out, left, k);
        CHECK(ok);
      } else if (arc.rule_name == "fill_gap") {
        int first = -1, last = -1, color = 0;
        for (size_t i = 0; i < in.size(); ++i)
          if (in[i] != 0) {
            if (first < 0) first = static_cast<int>(i);
            last = static_cast<int>(i);
            color = in[i];
          }
        REQUIRE(first >= 0);
        for (size_t i = 0; i < out.size(); ++i) {
          int expect = (static_cast<int>(i) >= first && static_cast<int>(i) <= last) ? color
                       : in[i];
          CHECK(out[i] == expect);
        }
      } else if (arc.rule_name == "value_remap") {
        // Zero stays fixed; the nonzero mapping is a consistent bijection.
        std::array<int, 10> map;
        map.fill(-1);
        for (size_t i = 0; i < in.size(); ++i) {
          int from = in[i], to = out[i];
          if (map[static_cast<size_t>(from)] < 0)
            map[static_cast<size_t>(from)] = to;
          else
            CHECK(map[static_cast<size_t>(from)] == to);
        }
        if (map[0] >= 0) CHECK(map[0] == 0);
      } else if (arc.rule_name == "duplicate_block") {
        int start = -1, end = -1;
        for (size_t i = 0; i < in.size(); ++i)
          if (in[i] != 0) {
            if (start < 0) start = static_cast<int>(i);
            end = static_cast<int>(i);
          }
        REQUIRE(start >= 0);
        int b = end - start + 1;
        for (size_t i = 0; i < out.size(); ++i) {
          int expect = in[i];
          int p = static_cast<int>(i);
          if (p > end && p <= end + b && p < static_cast<int>(in.size()))
            expect = in[static_cast<size_t>(start + (p - end - 1))];
          CHECK(out[i] == expect);
        }
      }
    }
    ++rules_seen;
  }
  CHECK(rules_seen == 300);
  CHECK(names.size() >= 5);  // every family appears across 300 seeds
}

TEST_CASE("invalid configs are rejected") {
  TaskConfig cfg = default_cfg();
  cfg.word_sorting.min_words = 9;
  cfg.word_sorting.max_words = 3;
  CHECK_THROWS_AS(generate(TaskKind::word_sorting, 0, cfg), ConfigError);

  TaskConfig cfg2 = default_cfg();
  cfg2.arc1d.num_train = 5;
  CHECK_THROWS_AS(generate(TaskKind::arc1d, 0, cfg2), ConfigError);

  TaskConfig cfg3 = default_cfg();
  cfg3.puzzle24.operators = "+%";
  CHECK_THROWS_AS(generate(TaskKind::puzzle24, 0, cfg3), ConfigError);
}

TEST_CASE("dataset round-trips through the line format") {
  TaskConfig cfg = default_cfg();
  std::vector<TaskInstance> instances;
  for (uint64_t seed = 0; seed < 10; ++seed)
    instances.push_back(generate(TaskKind::manipulate_matrix, seed, cfg));
  auto path = std::filesystem::temp_directory_path() / "cbrl_test_dataset.jsonl";
  write_dataset(path.string(), instances);
  auto loaded = read_dataset(path.string());
  REQUIRE(loaded.size() == instances.size());
  for (size_t i = 0; i < loaded.size(); ++i) CHECK(same_instance(loaded[i], instances[i]));
  std::filesystem::remove(path);
}

TEST_CASE("answer normalization collapses spaces per line") {
  CHECK(normalize_answer("  1 2\n3  4  ") == "1 2\n3 4");
  CHECK(normalize_answer("a\tb") == "a b");
  CHECK(normalize_answer("\n\nx\n\n") == "x");
  CHECK(normalize_answer("1 2 \n 3 4") == "1 2\n3 4");
}
