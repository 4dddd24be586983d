#pragma once

#include <atomic>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "cbrl/rng.hpp"
#include "cbrl/tasks.hpp"

namespace cbrl {

// One solved exemplar available for injection.
struct BankEntry {
  std::string question;
  std::string reasoning;  // may be empty
  std::string answer;
  std::vector<std::string> tags;
};

struct Bank {
  TaskKind task_kind = TaskKind::spell_backward;
  std::vector<BankEntry> entries;
};

// Generates `size` instances from the bank seed region (disjoint from the
// train/eval regions), solves them programmatically and attaches a
// deterministic per-kind reasoning trace.
Bank build_bank(TaskKind kind, int size, uint64_t master_seed, const TaskConfig& cfg);

// The trace template applied by build_bank; exposed for tests.
std::string make_reasoning_trace(TaskKind kind, const TaskDetail& detail);

// min(k, |bank|) distinct entries, uniform without replacement. Throws
// RunError when k > 0 and the bank is empty.
std::vector<BankEntry> sample_uniform(const Bank& bank, int k, RngStream& rng);

// Uniform without replacement from the entries sharing at least one tag with
// query_tags; falls back to sample_uniform when no entry matches.
std::vector<BankEntry> sample_by_tags(const Bank& bank, int k,
                                      const std::set<std::string>& query_tags,
                                      RngStream& rng);

// One JSON record per line, field order {question, reasoning, answer, tags}.
void save_bank(const std::string& path, const Bank& bank);
Bank load_bank(const std::string& path);

namespace instrumentation {
// Number of bank sampling calls since the last reset; evaluation paths are
// asserted to leave this untouched.
extern std::atomic<uint64_t> bank_samples;
void reset_bank_samples();
}  // namespace instrumentation

}  // namespace cbrl
