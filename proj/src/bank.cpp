#include "cbrl/bank.hpp"

#include <fstream>

#include "json.hpp"

#include "cbrl/errors.hpp"
#include "cbrl/seeds.hpp"
#include "cbrl/text.hpp"

namespace cbrl {

namespace {
using ordered_json = nlohmann::ordered_json;
}

std::string make_reasoning_trace(TaskKind kind, const TaskDetail& detail) {
  switch (kind) {
    case TaskKind::spell_backward: {
      const auto& d = std::get<SpellBackwardDetail>(detail);
      std::string letters;
      for (auto it = d.word.rbegin(); it != d.word.rend(); ++it) {
        if (!letters.empty()) letters += ", ";
        letters += *it;
      }
      std::string reversed(d.word.rbegin(), d.word.rend());
      return "The letters of '" + d.word + "' in reverse order are " + letters +
             ". Joined together: " + reversed + ".";
    }
    case TaskKind::word_sorting: {
      const auto& d = std::get<WordSortingDetail>(detail);
      std::string trace = "Compare first-character code points: ";
      for (size_t i = 0; i < d.words.size(); ++i) {
        if (i) trace += ", ";
        trace += d.words[i] + "=" + std::to_string(static_cast<int>(
                                        static_cast<unsigned char>(d.words[i][0])));
      }
      trace += ". Sorting by code point, ascending: " + join(d.sorted, ", ") + ".";
      return trace;
    }
    case TaskKind::arc1d: {
      const auto& d = std::get<Arc1dDetail>(detail);
      return "Each example applies the rule: " + d.rule_name +
             ". Applying it to the test input gives the output array.";
    }
    case TaskKind::manipulate_matrix: {
      const auto& d = std::get<MatrixDetail>(detail);
      return "Apply each operation to the grid in the order listed. After the last "
             "operation the grid is:\n" +
             render_grid(d.result);
    }
    case TaskKind::puzzle24: {
      const auto& d = std::get<Puzzle24Detail>(detail);
      std::vector<std::string> nums;
      for (int v : d.numbers) nums.push_back(std::to_string(v));
      return "The expression " + d.expression + " uses " + join(nums, ", ") +
             " exactly once each and evaluates to 24.";
    }
  }
  return "";
}

Bank build_bank(TaskKind kind, int size, uint64_t master_seed, const TaskConfig& cfg) {
  if (size < 1) throw ConfigError("bank size must be >= 1");
  cfg.validate(kind);
  Bank bank;
  bank.task_kind = kind;
  for (int j = 0; j < size; ++j) {
    uint64_t seed = seeds::bank_seed(master_seed, static_cast<uint64_t>(j));
    TaskDetail detail = generate_detail(kind, seed, cfg);
    BankEntry entry;
    entry.question = render_prompt(kind, detail);
    entry.reasoning = make_reasoning_trace(kind, detail);
    entry.answer = canonical_answer(kind, detail);
    entry.tags = detail_tags(kind, detail);
    if (entry.answer.empty()) throw RunError("bank entry with empty answer");
    bank.entries.push_back(std::move(entry));
  }
  return bank;
}

std::vector<BankEntry> sample_uniform(const Bank& bank, int k, RngStream& rng) {
  if (k < 0) throw ConfigError("sample count must be >= 0");
  if (k == 0) return {};
  instrumentation::bank_samples.fetch_add(1, std::memory_order_relaxed);
  if (bank.entries.empty()) throw RunError("injection requested on an empty bank");
  auto idx = rng.sample_without_replacement(bank.entries.size(), static_cast<size_t>(k));
  std::vector<BankEntry> out;
  out.reserve(idx.size());
  for (size_t i : idx) out.push_back(bank.entries[i]);
  return out;
}

std::vector<BankEntry> sample_by_tags(const Bank& bank, int k,
                                      const std::set<std::string>& query_tags,
                                      RngStream& rng) {
  if (k < 0) throw ConfigError("sample count must be >= 0");
  if (k == 0) return {};
  instrumentation::bank_samples.fetch_add(1, std::memory_order_relaxed);
  if (bank.entries.empty()) throw RunError("injection requested on an empty bank");
  std::vector<size_t> candidates;
  for (size_t i = 0; i < bank.entries.size(); ++i) {
    for (const auto& tag : bank.entries[i].tags) {
      if (query_tags.count(tag)) {
        candidates.push_back(i);
        break;
      }
    }
  }
  if (candidates.empty()) {
    // No shared tag anywhere: fall back to uniform so injection still happens.
    instrumentation::bank_samples.fetch_sub(1, std::memory_order_relaxed);
    return sample_uniform(bank, k, rng);
  }
  auto idx = rng.sample_without_replacement(candidates.size(), static_cast<size_t>(k));
  std::vector<BankEntry> out;
  out.reserve(idx.size());
  for (size_t i : idx) out.push_back(bank.entries[candidates[i]]);
  return out;
}

void save_bank(const std::string& path, const Bank& bank) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RunError("cannot open bank file for writing: " + path);
  for (const auto& e : bank.entries) {
    ordered_json j;
    j["question"] = e.question;
    j["reasoning"] = e.reasoning;
    j["answer"] = e.answer;
    j["tags"] = e.tags;
    out << j.dump() << '\n';
  }
}

Bank load_bank(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RunError("cannot open bank file: " + path);
  Bank bank;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ordered_json j = ordered_json::parse(line);
    BankEntry e;
    e.question = j.at("question").get<std::string>();
    e.reasoning = j.at("reasoning").get<std::string>();
    e.answer = j.at("answer").get<std::string>();
    e.tags = j.at("tags").get<std::vector<std::string>>();
    bank.entries.push_back(std::move(e));
  }
  return bank;
}

namespace instrumentation {
std::atomic<uint64_t> bank_samples{0};
void reset_bank_samples() { bank_samples.store(0); }
}  // namespace instrumentation

}  // namespace cbrl
