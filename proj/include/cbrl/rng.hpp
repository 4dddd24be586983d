#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cbrl {

// Splittable deterministic generator. Every consumer owns an independent
// stream derived from (master_seed, stream_id); the same pair always yields
// the same sequence on every platform, so nothing here depends on
// std::uniform_*_distribution (whose output is implementation-defined).
//
// Core is splitmix64: 64 bits of state advanced by a Weyl constant and
// finalized with a murmur-style mixer.
class RngStream {
 public:
  RngStream() : state_(0) {}
  explicit RngStream(uint64_t seed) : state_(seed) {}

  // Independent stream for (master_seed, stream_id).
  static RngStream substream(uint64_t master_seed, uint64_t stream_id);

  uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double next_double();

  // Uniform in [0, n); n must be > 0. Debiased by rejection.
  uint64_t next_below(uint64_t n);

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);

  bool bernoulli(double p) { return next_double() < p; }

  // Fisher-Yates, deterministic for a given stream state.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Sample k distinct indices from [0, n) without replacement, order of draw.
  std::vector<size_t> sample_without_replacement(size_t n, size_t k);

  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
};

// Stable 64-bit content fingerprint (FNV-1a) used in manifests.
uint64_t fnv1a64(const void* data, size_t len);
uint64_t fnv1a64_file(const std::string& path);

}  // namespace cbrl
