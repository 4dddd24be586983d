#pragma once

#include <cstdint>

namespace cbrl::seeds {

// Disjoint seed regions per master seed: training instances sit at the base,
// the few-shot bank one million above, evaluation two million above. Training
// never consumes more than kBankOffset indices (total_steps * batch_size is
// validated against this).
constexpr uint64_t kBankOffset = 1'000'000;
constexpr uint64_t kEvalOffset = 2'000'000;

inline uint64_t train_seed(uint64_t master, uint64_t index) { return master + index; }
inline uint64_t bank_seed(uint64_t master, uint64_t index) {
  return master + kBankOffset + index;
}
inline uint64_t eval_seed(uint64_t master, uint64_t index) {
  return master + kEvalOffset + index;
}

}  // namespace cbrl::seeds
