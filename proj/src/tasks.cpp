#include "cbrl/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "cbrl/errors.hpp"
#include "cbrl/text.hpp"

namespace cbrl {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr uint64_t kKindSalt[] = {11, 22, 33, 44, 55};

std::string render_array(const std::vector<int>& a) {
  std::string out;
  for (size_t i = 0; i < a.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(a[i]);
  }
  return out;
}

std::string random_word(RngStream& rng, int min_len, int max_len) {
  int len = static_cast<int>(rng.uniform_int(min_len, max_len));
  std::string w(static_cast<size_t>(len), 'a');
  for (char& c : w) c = static_cast<char>('a' + rng.next_below(26));
  if (rng.bernoulli(0.1)) w[0] = static_cast<char>(w[0] - 32);
  return w;
}

// ---- ARC-1D rule family ----------------------------------------------------

enum class ArcRule { shift, mirror, value_remap, fill_gap, duplicate_block };

const char* arc_rule_name(ArcRule r, bool left) {
  switch (r) {
    case ArcRule::shift: return left ? "shift_left" : "shift_right";
    case ArcRule::mirror: return "mirror";
    case ArcRule::value_remap: return "value_remap";
    case ArcRule::fill_gap: return "fill_gap";
    case ArcRule::duplicate_block: return "duplicate_block";
  }
  return "?";
}

struct ArcRuleParams {
  ArcRule rule;
  bool left = false;              // shift direction
  int k = 1;                      // shift amount
  std::array<int, 10> remap{};    // value_remap palette
};

std::vector<int> arc_make_input(RngStream& rng, ArcRule rule, int len) {
  std::vector<int> in(static_cast<size_t>(len), 0);
  switch (rule) {
    case ArcRule::shift:
    case ArcRule::mirror:
    case ArcRule::value_remap:
      for (int& v : in) v = static_cast<int>(rng.next_below(10));
      return in;
    case ArcRule::fill_gap: {
      int color = static_cast<int>(rng.uniform_int(1, 9));
      int i = static_cast<int>(rng.uniform_int(0, len - 3));
      int j = static_cast<int>(rng.uniform_int(i + 2, len - 1));
      in[static_cast<size_t>(i)] = color;
      in[static_cast<size_t>(j)] = color;
      return in;
    }
    case ArcRule::duplicate_block: {
      int color = static_cast<int>(rng.uniform_int(1, 9));
      int max_block = len / 2;
      int b = static_cast<int>(rng.uniform_int(1, std::min(4, max_block)));
      int i = static_cast<int>(rng.uniform_int(0, len - 2 * b));
      for (int p = i; p < i + b; ++p) in[static_cast<size_t>(p)] = color;
      return in;
    }
  }
  return in;
}

std::vector<int> arc_apply(const ArcRuleParams& params, const std::vector<int>& in) {
  int len = static_cast<int>(in.size());
  std::vector<int> out(in.size(), 0);
  switch (params.rule) {
    case ArcRule::shift:
      for (int i = 0; i < len; ++i) {
        int src = params.left ? i + params.k : i - params.k;
        out[static_cast<size_t>(i)] =
            (src >= 0 && src < len) ? in[static_cast<size_t>(src)] : 0;
      }
      return out;
    case ArcRule::mirror:
      out.assign(in.rbegin(), in.rend());
      return out;
    case ArcRule::value_remap:
      for (int i = 0; i < len; ++i)
        out[static_cast<size_t>(i)] = params.remap[static_cast<size_t>(in[static_cast<size_t>(i)])];
      return out;
    case ArcRule::fill_gap: {
      out = in;
      int first = -1, last = -1, color = 0;
      for (int i = 0; i < len; ++i) {
        if (in[static_cast<size_t>(i)] != 0) {
          if (first < 0) first = i;
          last = i;
          color = in[static_cast<size_t>(i)];
        }
      }
      if (first >= 0)
        for (int i = first; i <= last; ++i) out[static_cast<size_t>(i)] = color;
      return out;
    }
    case ArcRule::duplicate_block: {
      out = in;
      int start = -1, end = -1;
      for (int i = 0; i < len; ++i) {
        if (in[static_cast<size_t>(i)] != 0) {
          if (start < 0) start = i;
          end = i;
        }
      }
      if (start >= 0) {
        int b = end - start + 1;
        for (int p = 0; p < b && end + 1 + p < len; ++p)
          out[static_cast<size_t>(end + 1 + p)] = in[static_cast<size_t>(start + p)];
      }
      return out;
    }
  }
  return out;
}

Arc1dDetail generate_arc1d(RngStream& rng, const Arc1dConfig& cfg) {
  ArcRuleParams params;
  params.rule = static_cast<ArcRule>(rng.next_below(5));
  params.left = rng.bernoulli(0.5);
  int len = static_cast<int>(rng.uniform_int(cfg.min_size, cfg.max_size));
  params.k = static_cast<int>(rng.uniform_int(1, std::min(3, len - 1)));
  std::array<int, 10> palette{};
  std::iota(palette.begin(), palette.end(), 0);
  std::vector<int> nonzero(palette.begin() + 1, palette.end());
  rng.shuffle(nonzero);
  params.remap[0] = 0;
  for (size_t i = 0; i < nonzero.size(); ++i) params.remap[i + 1] = nonzero[i];

  Arc1dDetail detail;
  detail.rule_name = arc_rule_name(params.rule, params.left);
  for (int e = 0; e < cfg.num_train; ++e) {
    auto in = arc_make_input(rng, params.rule, len);
    detail.train.emplace_back(in, arc_apply(params, in));
  }
  detail.test_input = arc_make_input(rng, params.rule, len);
  detail.test_output = arc_apply(params, detail.test_input);
  return detail;
}

// ---- Manipulate Matrix -----------------------------------------------------

MatrixDetail generate_matrix(RngStream& rng, const MatrixConfig& cfg) {
  MatrixDetail detail;
  int rows = static_cast<int>(rng.uniform_int(cfg.min_rows, cfg.max_rows));
  int cols = static_cast<int>(rng.uniform_int(cfg.min_cols, cfg.max_cols));
  detail.grid.assign(static_cast<size_t>(rows), std::vector<int>(static_cast<size_t>(cols), 0));
  for (auto& row : detail.grid)
    for (int& v : row) v = static_cast<int>(rng.next_below(10));

  int n_ops = static_cast<int>(rng.uniform_int(cfg.min_transforms, cfg.max_transforms));
  int r = rows, c = cols;
  for (int i = 0; i < n_ops; ++i) {
    MatrixOp op;
    op.kind = static_cast<MatrixOpKind>(rng.next_below(10));
    switch (op.kind) {
      case MatrixOpKind::transpose:
      case MatrixOpKind::rotate90_cw:
      case MatrixOpKind::rotate90_ccw:
        std::swap(r, c);
        break;
      case MatrixOpKind::row_slice: {
        op.a = static_cast<int>(rng.uniform_int(0, r - 1));
        op.b = static_cast<int>(rng.uniform_int(op.a + 1, r));
        r = op.b - op.a;
        break;
      }
      case MatrixOpKind::col_slice: {
        op.a = static_cast<int>(rng.uniform_int(0, c - 1));
        op.b = static_cast<int>(rng.uniform_int(op.a + 1, c));
        c = op.b - op.a;
        break;
      }
      case MatrixOpKind::scalar_add:
        op.a = static_cast<int>(rng.uniform_int(1, 9));
        break;
      case MatrixOpKind::scalar_mul:
        op.a = static_cast<int>(rng.uniform_int(2, 3));
        break;
      default:
        break;
    }
    detail.ops.push_back(op);
  }
  detail.result = apply_matrix_ops(detail.grid, detail.ops);
  return detail;
}

// ---- Puzzle-24 exact rational search ----------------------------------------

struct Rat {
  long long num = 0;
  long long den = 1;
};

Rat make_rat(long long num, long long den) {
  if (den < 0) {
    num = -num;
    den = -den;
  }
  long long g = std::gcd(num < 0 ? -num : num, den);
  if (g > 1) {
    num /= g;
    den /= g;
  }
  return {num, den};
}

std::optional<Rat> rat_apply(char op, const Rat& a, const Rat& b) {
  switch (op) {
    case '+': return make_rat(a.num * b.den + b.num * a.den, a.den * b.den);
    case '-': return make_rat(a.num * b.den - b.num * a.den, a.den * b.den);
    case '*': return make_rat(a.num * b.num, a.den * b.den);
    case '/':
      if (b.num == 0) return std::nullopt;
      return make_rat(a.num * b.den, a.den * b.num);
  }
  return std::nullopt;
}

int op_prec(char op) { return (op == '+' || op == '-') ? 1 : 2; }

struct Term {
  Rat value;
  std::string text;
  int prec;  // 3 for a bare number
};

std::optional<Term> term_apply(char op, const Term& l, const Term& r) {
  auto v = rat_apply(op, l.value, r.value);
  if (!v) return std::nullopt;
  int p = op_prec(op);
  std::string ls = (l.prec < p) ? "(" + l.text + ")" : l.text;
  bool paren_r = r.prec < p || (r.prec == p && (op == '-' || op == '/'));
  std::string rs = paren_r ? "(" + r.text + ")" : r.text;
  return Term{*v, ls + op + rs, p};
}

bool is_24(const Rat& r) { return r.den == 1 && r.num == 24; }

}  // namespace

// ---- Public API --------------------------------------------------------------

const char* to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::arc1d: return "arc1d";
    case TaskKind::manipulate_matrix: return "manipulate_matrix";
    case TaskKind::word_sorting: return "word_sorting";
    case TaskKind::spell_backward: return "spell_backward";
    case TaskKind::puzzle24: return "puzzle24";
  }
  return "?";
}

std::optional<TaskKind> task_kind_from_string(const std::string& name) {
  for (TaskKind k : all_task_kinds())
    if (name == to_string(k)) return k;
  return std::nullopt;
}

const std::vector<TaskKind>& all_task_kinds() {
  static const std::vector<TaskKind> kinds = {
      TaskKind::arc1d, TaskKind::manipulate_matrix, TaskKind::word_sorting,
      TaskKind::spell_backward, TaskKind::puzzle24};
  return kinds;
}

void TaskConfig::validate(TaskKind kind) const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid task config: " + what);
  };
  switch (kind) {
    case TaskKind::arc1d:
      check(arc1d.min_size <= arc1d.max_size, "arc1d size range");
      check(arc1d.min_size >= 4, "arc1d min_size must be >= 4");
      check(arc1d.num_train == 2 || arc1d.num_train == 3, "arc1d num_train must be 2 or 3");
      break;
    case TaskKind::manipulate_matrix:
      check(matrix.min_rows <= matrix.max_rows, "matrix row range");
      check(matrix.min_cols <= matrix.max_cols, "matrix col range");
      check(matrix.min_rows >= 1 && matrix.min_cols >= 1, "matrix dims must be positive");
      check(matrix.min_transforms <= matrix.max_transforms, "matrix transform range");
      check(matrix.min_transforms >= 1, "matrix min_transforms must be >= 1");
      break;
    case TaskKind::word_sorting:
      check(word_sorting.min_words <= word_sorting.max_words, "word count range");
      check(word_sorting.min_words >= 1, "word count must be positive");
      check(word_sorting.min_word_length <= word_sorting.max_word_length, "word length range");
      check(word_sorting.min_word_length >= 1, "word length must be positive");
      break;
    case TaskKind::spell_backward:
      check(spell_backward.min_word_len <= spell_backward.max_word_len, "word length range");
      check(spell_backward.min_word_len >= 1, "word length must be positive");
      break;
    case TaskKind::puzzle24: {
      check(puzzle24.min_value <= puzzle24.max_value, "value range");
      check(puzzle24.min_value >= 1, "puzzle24 values must be >= 1");
      check(!puzzle24.operators.empty(), "puzzle24 needs at least one operator");
      for (char op : puzzle24.operators)
        check(op == '+' || op == '-' || op == '*' || op == '/',
              std::string("unknown puzzle24 operator '") + op + "'");
      break;
    }
  }
}

Grid apply_matrix_ops(const Grid& grid, const std::vector<MatrixOp>& ops) {
  Grid g = grid;
  for (const MatrixOp& op : ops) {
    int rows = static_cast<int>(g.size());
    int cols = rows ? static_cast<int>(g[0].size()) : 0;
    switch (op.kind) {
      case MatrixOpKind::transpose: {
        Grid t(static_cast<size_t>(cols), std::vector<int>(static_cast<size_t>(rows)));
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j) t[static_cast<size_t>(j)][static_cast<size_t>(i)] = g[static_cast<size_t>(i)][static_cast<size_t>(j)];
        g = std::move(t);
        break;
      }
      case MatrixOpKind::rotate90_cw: {
        Grid t(static_cast<size_t>(cols), std::vector<int>(static_cast<size_t>(rows)));
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j)
            t[static_cast<size_t>(j)][static_cast<size_t>(rows - 1 - i)] = g[static_cast<size_t>(i)][static_cast<size_t>(j)];
        g = std::move(t);
        break;
      }
      case MatrixOpKind::rotate90_ccw: {
        Grid t(static_cast<size_t>(cols), std::vector<int>(static_cast<size_t>(rows)));
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j)
            t[static_cast<size_t>(cols - 1 - j)][static_cast<size_t>(i)] = g[static_cast<size_t>(i)][static_cast<size_t>(j)];
        g = std::move(t);
        break;
      }
      case MatrixOpKind::rotate180: {
        Grid t(static_cast<size_t>(rows), std::vector<int>(static_cast<size_t>(cols)));
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j)
            t[static_cast<size_t>(rows - 1 - i)][static_cast<size_t>(cols - 1 - j)] = g[static_cast<size_t>(i)][static_cast<size_t>(j)];
        g = std::move(t);
        break;
      }
      case MatrixOpKind::flip_horizontal:
        for (auto& row : g) std::reverse(row.begin(), row.end());
        break;
      case MatrixOpKind::flip_vertical:
        std::reverse(g.begin(), g.end());
        break;
      case MatrixOpKind::row_slice: {
        if (op.a < 0 || op.a >= op.b || op.b > rows)
          throw RunError("row_slice out of range");
        Grid t(g.begin() + op.a, g.begin() + op.b);
        g = std::move(t);
        break;
      }
      case MatrixOpKind::col_slice: {
        if (op.a < 0 || op.a >= op.b || op.b > cols)
          throw RunError("col_slice out of range");
        for (auto& row : g)
          row = std::vector<int>(row.begin() + op.a, row.begin() + op.b);
        break;
      }
      case MatrixOpKind::scalar_add:
        for (auto& row : g)
          for (int& v : row) v += op.a;
        break;
      case MatrixOpKind::scalar_mul:
        for (auto& row : g)
          for (int& v : row) v *= op.a;
        break;
    }
  }
  return g;
}

std::string matrix_op_name(const MatrixOp& op) {
  switch (op.kind) {
    case MatrixOpKind::transpose: return "transpose";
    case MatrixOpKind::rotate90_cw: return "rotate90_cw";
    case MatrixOpKind::rotate90_ccw: return "rotate90_ccw";
    case MatrixOpKind::rotate180: return "rotate180";
    case MatrixOpKind::flip_horizontal: return "flip_horizontal";
    case MatrixOpKind::flip_vertical: return "flip_vertical";
    case MatrixOpKind::row_slice:
      return "row_slice(" + std::to_string(op.a) + "," + std::to_string(op.b) + ")";
    case MatrixOpKind::col_slice:
      return "col_slice(" + std::to_string(op.a) + "," + std::to_string(op.b) + ")";
    case MatrixOpKind::scalar_add: return "scalar_add(" + std::to_string(op.a) + ")";
    case MatrixOpKind::scalar_mul: return "scalar_mul(" + std::to_string(op.a) + ")";
  }
  return "?";
}

std::string render_grid(const Grid& grid) {
  std::string out;
  for (size_t i = 0; i < grid.size(); ++i) {
    if (i) out += '\n';
    for (size_t j = 0; j < grid[i].size(); ++j) {
      if (j) out += ' ';
      out += std::to_string(grid[i][j]);
    }
  }
  return out;
}

std::optional<std::string> solve_puzzle24_oracle(const std::array<int, 4>& numbers,
                                                 const std::string& operators) {
  std::array<int, 4> perm = numbers;
  std::sort(perm.begin(), perm.end());
  do {
    Term t[4];
    for (int i = 0; i < 4; ++i)
      t[i] = Term{make_rat(perm[static_cast<size_t>(i)], 1),
                  std::to_string(perm[static_cast<size_t>(i)]), 3};
    for (char o1 : operators)
      for (char o2 : operators)
        for (char o3 : operators) {
          // ((a o1 b) o2 c) o3 d
          if (auto ab = term_apply(o1, t[0], t[1]))
            if (auto abc = term_apply(o2, *ab, t[2]))
              if (auto all = term_apply(o3, *abc, t[3]); all && is_24(all->value))
                return all->text;
          // (a o1 (b o2 c)) o3 d
          if (auto bc = term_apply(o2, t[1], t[2]))
            if (auto abc = term_apply(o1, t[0], *bc))
              if (auto all = term_apply(o3, *abc, t[3]); all && is_24(all->value))
                return all->text;
          // (a o1 b) o2 (c o3 d)
          if (auto ab = term_apply(o1, t[0], t[1]))
            if (auto cd = term_apply(o3, t[2], t[3]))
              if (auto all = term_apply(o2, *ab, *cd); all && is_24(all->value))
                return all->text;
          // a o1 ((b o2 c) o3 d)
          if (auto bc = term_apply(o2, t[1], t[2]))
            if (auto bcd = term_apply(o3, *bc, t[3]))
              if (auto all = term_apply(o1, t[0], *bcd); all && is_24(all->value))
                return all->text;
          // a o1 (b o2 (c o3 d))
          if (auto cd = term_apply(o3, t[2], t[3]))
            if (auto bcd = term_apply(o2, t[1], *cd))
              if (auto all = term_apply(o1, t[0], *bcd); all && is_24(all->value))
                return all->text;
        }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::nullopt;
}

TaskDetail generate_detail(TaskKind kind, uint64_t seed, const TaskConfig& cfg) {
  cfg.validate(kind);
  RngStream rng = RngStream::substream(seed, kKindSalt[static_cast<size_t>(kind)]);
  switch (kind) {
    case TaskKind::arc1d:
      return generate_arc1d(rng, cfg.arc1d);
    case TaskKind::manipulate_matrix:
      return generate_matrix(rng, cfg.matrix);
    case TaskKind::word_sorting: {
      WordSortingDetail detail;
      int n = static_cast<int>(rng.uniform_int(cfg.word_sorting.min_words, cfg.word_sorting.max_words));
      for (int i = 0; i < n; ++i)
        detail.words.push_back(random_word(rng, cfg.word_sorting.min_word_length,
                                           cfg.word_sorting.max_word_length));
      detail.sorted = detail.words;
      std::sort(detail.sorted.begin(), detail.sorted.end());
      return detail;
    }
    case TaskKind::spell_backward: {
      SpellBackwardDetail detail;
      detail.word = random_word(rng, cfg.spell_backward.min_word_len,
                                cfg.spell_backward.max_word_len);
      return detail;
    }
    case TaskKind::puzzle24: {
      const auto& pc = cfg.puzzle24;
      for (int attempt = 0; attempt < 1000; ++attempt) {
        Puzzle24Detail detail;
        for (int& v : detail.numbers)
          v = static_cast<int>(rng.uniform_int(pc.min_value, pc.max_value));
        if (auto expr = solve_puzzle24_oracle(detail.numbers, pc.operators)) {
          detail.expression = *expr;
          return detail;
        }
      }
      throw RunError("puzzle24: exhausted resample budget; no solvable quadruple found");
    }
  }
  throw RunError("unreachable task kind");
}

std::string render_prompt(TaskKind kind, const TaskDetail& detail) {
  switch (kind) {
    case TaskKind::arc1d: {
      const auto& d = std::get<Arc1dDetail>(detail);
      std::string out =
          "Find the rule that maps each input array to its output array, then "
          "apply it to the test input.\n";
      for (size_t i = 0; i < d.train.size(); ++i) {
        out += "Example " + std::to_string(i + 1) + ":\nInput: " +
               render_array(d.train[i].first) + "\nOutput: " +
               render_array(d.train[i].second) + "\n";
      }
      out += "Test input: " + render_array(d.test_input) +
             "\nRespond with the output array.";
      return out;
    }
    case TaskKind::manipulate_matrix: {
      const auto& d = std::get<MatrixDetail>(detail);
      std::vector<std::string> names;
      for (const auto& op : d.ops) names.push_back(matrix_op_name(op));
      return "Start with this matrix:\n" + render_grid(d.grid) +
             "\nApply these operations in order: " + join(names, ", ") +
             "\nRespond with the resulting matrix.";
    }
    case TaskKind::word_sorting: {
      const auto& d = std::get<WordSortingDetail>(detail);
      return "Sort these words in ascending order using ASCII/Unicode ordering: " +
             join(d.words, ", ") +
             "\nRespond with the sorted words separated by commas.";
    }
    case TaskKind::spell_backward: {
      const auto& d = std::get<SpellBackwardDetail>(detail);
      return "Spell this word backward: " + d.word;
    }
    case TaskKind::puzzle24: {
      const auto& d = std::get<Puzzle24Detail>(detail);
      std::vector<std::string> nums;
      for (int v : d.numbers) nums.push_back(std::to_string(v));
      return "Using the numbers " + join(nums, ", ") +
             " exactly once each, combine them with + - * / and parentheses to "
             "make 24.\nRespond with a single arithmetic expression.";
    }
  }
  return "";
}

std::string canonical_answer(TaskKind kind, const TaskDetail& detail) {
  switch (kind) {
    case TaskKind::arc1d:
      return render_array(std::get<Arc1dDetail>(detail).test_output);
    case TaskKind::manipulate_matrix:
      return render_grid(std::get<MatrixDetail>(detail).result);
    case TaskKind::word_sorting:
      return join(std::get<WordSortingDetail>(detail).sorted, ", ");
    case TaskKind::spell_backward: {
      std::string w = std::get<SpellBackwardDetail>(detail).word;
      std::reverse(w.begin(), w.end());
      return w;
    }
    case TaskKind::puzzle24:
      return std::get<Puzzle24Detail>(detail).expression;
  }
  return "";
}

std::vector<std::string> detail_tags(TaskKind kind, const TaskDetail& detail) {
  std::vector<std::string> tags = {to_string(kind)};
  switch (kind) {
    case TaskKind::arc1d:
      tags.push_back("rule:" + std::get<Arc1dDetail>(detail).rule_name);
      break;
    case TaskKind::manipulate_matrix:
      tags.push_back(std::get<MatrixDetail>(detail).ops.size() <= 3 ? "ops:few" : "ops:many");
      break;
    case TaskKind::word_sorting:
      tags.push_back(std::get<WordSortingDetail>(detail).words.size() <= 6 ? "words:few"
                                                                           : "words:many");
      break;
    case TaskKind::spell_backward:
      tags.push_back(std::get<SpellBackwardDetail>(detail).word.size() <= 5 ? "word:short"
                                                                            : "word:long");
      break;
    case TaskKind::puzzle24: {
      const auto& nums = std::get<Puzzle24Detail>(detail).numbers;
      int mx = *std::max_element(nums.begin(), nums.end());
      tags.push_back(mx <= 6 ? "numbers:small" : "numbers:large");
      break;
    }
  }
  return tags;
}

TaskInstance generate(TaskKind kind, uint64_t seed, const TaskConfig& cfg) {
  TaskDetail detail = generate_detail(kind, seed, cfg);
  TaskInstance inst;
  inst.kind = kind;
  inst.seed = seed;
  inst.prompt = render_prompt(kind, detail);
  inst.answer = canonical_answer(kind, detail);
  inst.tags = detail_tags(kind, detail);
  return inst;
}

double verify(const TaskInstance& instance, const std::string& answer_text) {
  return normalize_answer(answer_text) == normalize_answer(instance.answer) ? 1.0 : 0.0;
}

TaskInstance make_word_sorting_instance(const std::vector<std::string>& words,
                                        uint64_t seed) {
  WordSortingDetail detail;
  detail.words = words;
  detail.sorted = words;
  std::sort(detail.sorted.begin(), detail.sorted.end());
  TaskDetail d = detail;
  TaskInstance inst;
  inst.kind = TaskKind::word_sorting;
  inst.seed = seed;
  inst.prompt = render_prompt(inst.kind, d);
  inst.answer = canonical_answer(inst.kind, d);
  inst.tags = detail_tags(inst.kind, d);
  return inst;
}

std::string instance_to_json_line(const TaskInstance& instance) {
  ordered_json j;
  j["kind"] = to_string(instance.kind);
  j["seed"] = instance.seed;
  j["prompt"] = instance.prompt;
  j["answer"] = instance.answer;
  j["tags"] = instance.tags;
  return j.dump();
}

TaskInstance instance_from_json_line(const std::string& line) {
  ordered_json j = ordered_json::parse(line);
  TaskInstance inst;
  auto kind = task_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw RunError("unknown task kind in dataset record");
  inst.kind = *kind;
  inst.seed = j.at("seed").get<uint64_t>();
  inst.prompt = j.at("prompt").get<std::string>();
  inst.answer = j.at("answer").get<std::string>();
  inst.tags = j.at("tags").get<std::vector<std::string>>();
  return inst;
}

void write_dataset(const std::string& path, const std::vector<TaskInstance>& instances) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RunError("cannot open dataset file for writing: " + path);
  for (const auto& inst : instances) out << instance_to_json_line(inst) << '\n';
}

std::vector<TaskInstance> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RunError("cannot open dataset file: " + path);
  std::vector<TaskInstance> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    out.push_back(instance_from_json_line(line));
  }
  return out;
}

}  // namespace cbrl
