#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cbrl/rng.hpp"

namespace cbrl {

enum class TaskKind {
  arc1d,
  manipulate_matrix,
  word_sorting,
  spell_backward,
  puzzle24,
};

const char* to_string(TaskKind kind);
std::optional<TaskKind> task_kind_from_string(const std::string& name);
const std::vector<TaskKind>& all_task_kinds();

struct Arc1dConfig {
  int min_size = 10;
  int max_size = 30;
  int num_train = 3;
};

struct MatrixConfig {
  int min_rows = 2;
  int max_rows = 10;
  int min_cols = 2;
  int max_cols = 10;
  int min_transforms = 1;
  int max_transforms = 10;
};

struct WordSortingConfig {
  int min_words = 3;
  int max_words = 10;
  int min_word_length = 3;
  int max_word_length = 12;
};

struct SpellBackwardConfig {
  int min_word_len = 3;
  int max_word_len = 10;
};

struct Puzzle24Config {
  std::string operators = "+-*/";  // subset of these four
  int min_value = 1;
  int max_value = 10;
};

// One bundle holding the per-kind parameter blocks; only the block matching
// the instance kind is consulted.
struct TaskConfig {
  Arc1dConfig arc1d;
  MatrixConfig matrix;
  WordSortingConfig word_sorting;
  SpellBackwardConfig spell_backward;
  Puzzle24Config puzzle24;

  // Throws ConfigError on range violations for the given kind.
  void validate(TaskKind kind) const;
};

struct TaskInstance {
  TaskKind kind;
  uint64_t seed = 0;
  std::string prompt;
  std::string answer;  // canonical
  std::vector<std::string> tags;
};

// ---- Matrix operations -----------------------------------------------------

enum class MatrixOpKind {
  transpose,
  rotate90_cw,
  rotate90_ccw,
  rotate180,
  flip_horizontal,  // mirror across the vertical axis (reverses each row)
  flip_vertical,    // mirror across the horizontal axis (reverses row order)
  row_slice,        // keep rows [a, b)
  col_slice,        // keep cols [a, b)
  scalar_add,
  scalar_mul,
};

struct MatrixOp {
  MatrixOpKind kind;
  int a = 0;
  int b = 0;
};

using Grid = std::vector<std::vector<int>>;

// Sequential left-to-right application. Throws RunError on an out-of-range
// slice; the generator never produces one.
Grid apply_matrix_ops(const Grid& grid, const std::vector<MatrixOp>& ops);

std::string matrix_op_name(const MatrixOp& op);
std::string render_grid(const Grid& grid);

// ---- Puzzle-24 -------------------------------------------------------------

// Brute force over operand orders, operator choices and parenthesizations
// under exact rational arithmetic. Returns an expression evaluating to
// exactly 24, or nullopt when the quadruple is unsolvable.
std::optional<std::string> solve_puzzle24_oracle(const std::array<int, 4>& numbers,
                                                 const std::string& operators = "+-*/");

// ---- Structured problem details (used by renderers and the bank traces) ----

struct Arc1dDetail {
  std::string rule_name;
  std::vector<std::pair<std::vector<int>, std::vector<int>>> train;
  std::vector<int> test_input;
  std::vector<int> test_output;
};

struct MatrixDetail {
  Grid grid;
  std::vector<MatrixOp> ops;
  Grid result;
};

struct WordSortingDetail {
  std::vector<std::string> words;
  std::vector<std::string> sorted;
};

struct SpellBackwardDetail {
  std::string word;
};

struct Puzzle24Detail {
  std::array<int, 4> numbers;
  std::string expression;
};

using TaskDetail = std::variant<Arc1dDetail, MatrixDetail, WordSortingDetail,
                                SpellBackwardDetail, Puzzle24Detail>;

TaskDetail generate_detail(TaskKind kind, uint64_t seed, const TaskConfig& cfg);
std::string render_prompt(TaskKind kind, const TaskDetail& detail);
std::string canonical_answer(TaskKind kind, const TaskDetail& detail);
std::vector<std::string> detail_tags(TaskKind kind, const TaskDetail& detail);

// ---- Core operations -------------------------------------------------------

// Deterministic in (kind, seed, cfg). Puzzle-24 rejects and resamples until
// the oracle confirms solvability (bounded attempt budget).
TaskInstance generate(TaskKind kind, uint64_t seed, const TaskConfig& cfg);

// 1.0 iff normalize_answer(answer_text) == normalize_answer(canonical).
double verify(const TaskInstance& instance, const std::string& answer_text);

// Builds a word-sorting instance from a fixed word list (also used by the
// generator); exposed so known word lists can be scored directly.
TaskInstance make_word_sorting_instance(const std::vector<std::string>& words,
                                        uint64_t seed);

// ---- Dataset emission ------------------------------------------------------

// One JSON record per line, field order {kind, seed, prompt, answer, tags}.
std::string instance_to_json_line(const TaskInstance& instance);
TaskInstance instance_from_json_line(const std::string& line);
void write_dataset(const std::string& path, const std::vector<TaskInstance>& instances);
std::vector<TaskInstance> read_dataset(const std::string& path);

}  // namespace cbrl
