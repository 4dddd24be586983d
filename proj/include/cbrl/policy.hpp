#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cbrl/rng.hpp"
#include "cbrl/vocab.hpp"

namespace cbrl {

// Decoder-only causal transformer over the fixed character vocabulary:
// learned token + position embeddings, pre-LN attention and GELU MLP blocks,
// final LayerNorm and output projection.
struct PolicyConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int context = 512;

  bool operator==(const PolicyConfig&) const = default;
  void validate() const;  // throws ConfigError
};

struct SamplingConfig {
  double temperature = 1.0;  // > 0; values below 1e-9 mean greedy
  double top_p = 1.0;        // in (0, 1]
  int max_new_tokens = 64;

  void validate() const;
};

// Flat parameter layout; offsets into PolicyParamsT::data.
struct ParamLayout {
  struct Layer {
    size_t ln1_g, ln1_b, w_qkv, b_qkv, w_ao, b_ao;
    size_t ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };
  size_t wte = 0, wpe = 0;
  std::vector<Layer> layers;
  size_t lnf_g = 0, lnf_b = 0, w_out = 0, b_out = 0;
  size_t total = 0;

  static ParamLayout make(const PolicyConfig& cfg, int vocab);
};

template <class Real>
struct PolicyParamsT {
  PolicyConfig cfg;
  int vocab = 0;
  std::vector<Real> data;
};
using PolicyParams = PolicyParamsT<float>;

// Seeded scaled-uniform initialization, scale 1/sqrt(d_model); LayerNorm
// gains start at one, every bias at zero. The draw sequence is independent
// of Real, so float and double share initializations.
template <class Real>
PolicyParamsT<Real> init_policy_t(uint64_t seed, const PolicyConfig& cfg);
PolicyParams init_policy(uint64_t seed, const PolicyConfig& cfg);

template <class To, class From>
PolicyParamsT<To> cast_params(const PolicyParamsT<From>& in) {
  PolicyParamsT<To> out;
  out.cfg = in.cfg;
  out.vocab = in.vocab;
  out.data.assign(in.data.begin(), in.data.end());
  return out;
}

// Versioned checkpoint: magic, config echo, vocabulary fingerprint, flat
// little-endian float payload. save/load round-trips bit-exactly.
void save_policy(const std::string& path, const PolicyParams& params);
PolicyParams load_policy(const std::string& path);

// Full-sequence forward; row-major [tokens.size() x vocab] log-probabilities,
// each row conditioned on the strict prefix. Throws RunError past context.
template <class Real>
std::vector<Real> full_logprobs(const PolicyParamsT<Real>& params,
                                const std::vector<int>& tokens);

// ---- Sampling --------------------------------------------------------------

template <class Real>
struct KvCacheT {
  int len = 0;
  std::vector<std::vector<Real>> k, v;  // per layer, len*d_model filled
  std::vector<Real> last_stream;        // residual stream of the last position
};
using KvCache = KvCacheT<float>;

template <class Real>
KvCacheT<Real> prefill(const PolicyParamsT<Real>& params, const std::vector<int>& tokens);

struct SampledSeq {
  std::vector<int> tokens;        // includes the terminating EOS when emitted
  std::vector<double> logprobs;   // model log-probability of each emitted token
  bool hit_eos = false;
};

// Nucleus sampling continuing a prefilled prompt; the cache argument is not
// modified (each call works on a copy).
template <class Real>
SampledSeq sample_from_cache(const PolicyParamsT<Real>& params,
                             const KvCacheT<Real>& prompt_cache,
                             const SamplingConfig& cfg, RngStream& rng);

template <class Real>
SampledSeq sample(const PolicyParamsT<Real>& params, const std::vector<int>& prompt_tokens,
                  const SamplingConfig& cfg, RngStream& rng);

// Teacher-forced log-probabilities of each response token continuing the
// prompt (used for the frozen-reference KL term).
template <class Real>
std::vector<Real> score_response(const PolicyParamsT<Real>& params,
                                 const KvCacheT<Real>& prompt_cache,
                                 const std::vector<int>& response);

// ---- Differentiable group pass ----------------------------------------------

// Forward over one rollout group (shared prompt, n sampled responses) with
// cached activations, then reverse-mode accumulation of parameter gradients.
// The prompt forward runs once and its adjoints gather every member's
// attention reads, so group cost is prompt + sum(responses), not n * prompt.
//
// The caller drives the loss through two per-token coefficient tables:
//   dLoss/dlogits += c_taken[m][j] * d(logprob of taken token)/dlogits
//                  + c_ent[m][j]   * d(entropy)/dlogits
// at the position predicting response token j of member m. Prompt positions
// other than the final one carry no loss terms by construction.
template <class Real>
class GroupPass {
 public:
  GroupPass(const PolicyParamsT<Real>& params, const std::vector<int>& prompt,
            const std::vector<std::vector<int>>& responses);
  ~GroupPass();
  GroupPass(GroupPass&&) noexcept;
  GroupPass& operator=(GroupPass&&) noexcept;

  int members() const;
  // log pi(response[m][j] | prefix)
  Real taken_logprob(int member, int j) const;
  // entropy of the full next-token distribution at that position
  Real entropy(int member, int j) const;

  // Accumulates into grad (size ParamLayout::total).
  void backward(const std::vector<std::vector<Real>>& c_taken,
                const std::vector<std::vector<Real>>& c_ent,
                std::vector<Real>& grad);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

extern template struct PolicyParamsT<float>;
extern template struct PolicyParamsT<double>;
extern template PolicyParamsT<float> init_policy_t<float>(uint64_t, const PolicyConfig&);
extern template PolicyParamsT<double> init_policy_t<double>(uint64_t, const PolicyConfig&);
extern template std::vector<float> full_logprobs<float>(const PolicyParamsT<float>&,
                                                        const std::vector<int>&);
extern template std::vector<double> full_logprobs<double>(const PolicyParamsT<double>&,
                                                          const std::vector<int>&);
extern template KvCacheT<float> prefill<float>(const PolicyParamsT<float>&,
                                               const std::vector<int>&);
extern template KvCacheT<double> prefill<double>(const PolicyParamsT<double>&,
                                                 const std::vector<int>&);
extern template SampledSeq sample_from_cache<float>(const PolicyParamsT<float>&,
                                                    const KvCacheT<float>&,
                                                    const SamplingConfig&, RngStream&);
extern template SampledSeq sample_from_cache<double>(const PolicyParamsT<double>&,
                                                     const KvCacheT<double>&,
                                                     const SamplingConfig&, RngStream&);
extern template SampledSeq sample<float>(const PolicyParamsT<float>&, const std::vector<int>&,
                                         const SamplingConfig&, RngStream&);
extern template SampledSeq sample<double>(const PolicyParamsT<double>&,
                                          const std::vector<int>&, const SamplingConfig&,
                                          RngStream&);
extern template std::vector<float> score_response<float>(const PolicyParamsT<float>&,
                                                         const KvCacheT<float>&,
                                                         const std::vector<int>&);
extern template std::vector<double> score_response<double>(const PolicyParamsT<double>&,
                                                           const KvCacheT<double>&,
                                                           const std::vector<int>&);
extern template class GroupPass<float>;
extern template class GroupPass<double>;

}  // namespace cbrl
