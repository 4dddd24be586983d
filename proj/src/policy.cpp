#include "cbrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "cbrl/errors.hpp"

namespace cbrl {

void PolicyConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || n_layers < 1 || context < 2)
    throw ConfigError("policy config: dimensions must be positive");
  if (d_model % n_heads != 0)
    throw ConfigError("policy config: d_model must be divisible by n_heads");
}

void SamplingConfig::validate() const {
  if (temperature < 0.0) throw ConfigError("sampling temperature must be >= 0");
  if (top_p <= 0.0 || top_p > 1.0) throw ConfigError("top_p must lie in (0, 1]");
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
}

ParamLayout ParamLayout::make(const PolicyConfig& cfg, int vocab) {
  ParamLayout lay;
  size_t d = static_cast<size_t>(cfg.d_model);
  size_t v = static_cast<size_t>(vocab);
  size_t f = 4 * d;
  size_t off = 0;
  auto take = [&off](size_t n) {
    size_t at = off;
    off += n;
    return at;
  };
  lay.wte = take(v * d);
  lay.wpe = take(static_cast<size_t>(cfg.context) * d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    Layer lyr;
    lyr.ln1_g = take(d);
    lyr.ln1_b = take(d);
    lyr.w_qkv = take(d * 3 * d);
    lyr.b_qkv = take(3 * d);
    lyr.w_ao = take(d * d);
    lyr.b_ao = take(d);
    lyr.ln2_g = take(d);
    lyr.ln2_b = take(d);
    lyr.w_fc = take(d * f);
    lyr.b_fc = take(f);
    lyr.w_proj = take(f * d);
    lyr.b_proj = take(d);
    lay.layers.push_back(lyr);
  }
  lay.lnf_g = take(d);
  lay.lnf_b = take(d);
  lay.w_out = take(d * v);
  lay.b_out = take(v);
  lay.total = off;
  return lay;
}

template <class Real>
PolicyParamsT<Real> init_policy_t(uint64_t seed, const PolicyConfig& cfg) {
  cfg.validate();
  PolicyParamsT<Real> p;
  p.cfg = cfg;
  p.vocab = Vocab::instance().size();
  ParamLayout lay = ParamLayout::make(cfg, p.vocab);
  p.data.assign(lay.total, Real(0));

  RngStream rng(RngStream::substream(seed, 0xC0DEC0DEULL).state());
  double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  auto fill_uniform = [&](size_t off, size_t n) {
    for (size_t i = 0; i < n; ++i)
      p.data[off + i] = static_cast<Real>((2.0 * rng.next_double() - 1.0) * scale);
  };
  auto fill_const = [&](size_t off, size_t n, double val) {
    for (size_t i = 0; i < n; ++i) p.data[off + i] = static_cast<Real>(val);
  };

  size_t d = static_cast<size_t>(cfg.d_model);
  size_t v = static_cast<size_t>(p.vocab);
  size_t f = 4 * d;
  fill_uniform(lay.wte, v * d);
  fill_uniform(lay.wpe, static_cast<size_t>(cfg.context) * d);
  for (const auto& lyr : lay.layers) {
    fill_const(lyr.ln1_g, d, 1.0);
    fill_uniform(lyr.w_qkv, d * 3 * d);
    fill_uniform(lyr.w_ao, d * d);
    fill_const(lyr.ln2_g, d, 1.0);
    fill_uniform(lyr.w_fc, d * f);
    fill_uniform(lyr.w_proj, f * d);
  }
  fill_const(lay.lnf_g, d, 1.0);
  fill_uniform(lay.w_out, d * v);
  return p;
}

PolicyParams init_policy(uint64_t seed, const PolicyConfig& cfg) {
  return init_policy_t<float>(seed, cfg);
}

namespace {

constexpr char kPolicyMagic[8] = {'C', 'B', 'R', 'L', 'P', 'O', 'L', '1'};

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void save_policy(const std::string& path, const PolicyParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RunError("cannot open checkpoint for writing: " + path);
  out.write(kPolicyMagic, sizeof(kPolicyMagic));
  write_pod(out, uint32_t{1});
  write_pod(out, Vocab::instance().fingerprint());
  write_pod(out, static_cast<int32_t>(params.vocab));
  write_pod(out, static_cast<int32_t>(params.cfg.d_model));
  write_pod(out, static_cast<int32_t>(params.cfg.n_heads));
  write_pod(out, static_cast<int32_t>(params.cfg.n_layers));
  write_pod(out, static_cast<int32_t>(params.cfg.context));
  write_pod(out, static_cast<uint64_t>(params.data.size()));
  out.write(reinterpret_cast<const char*>(params.data.data()),
            static_cast<std::streamsize>(params.data.size() * sizeof(float)));
  if (!out) throw RunError("failed writing checkpoint: " + path);
}

PolicyParams load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RunError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kPolicyMagic, sizeof(magic)) != 0)
    throw RunError("corrupt checkpoint (bad magic): " + path);
  uint32_t version = 0;
  read_pod(in, version);
  if (version != 1) throw RunError("unsupported checkpoint version");
  uint64_t fp = 0;
  read_pod(in, fp);
  if (fp != Vocab::instance().fingerprint())
    throw RunError("checkpoint was written with a different vocabulary");
  int32_t vocab = 0, d = 0, h = 0, l = 0, ctx = 0;
  read_pod(in, vocab);
  read_pod(in, d);
  read_pod(in, h);
  read_pod(in, l);
  read_pod(in, ctx);
  uint64_t count = 0;
  read_pod(in, count);
  PolicyParams p;
  p.cfg = PolicyConfig{d, h, l, ctx};
  p.vocab = vocab;
  ParamLayout lay = ParamLayout::make(p.cfg, p.vocab);
  if (count != lay.total) throw RunError("corrupt checkpoint (parameter count mismatch)");
  p.data.resize(count);
  in.read(reinterpret_cast<char*>(p.data.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw RunError("corrupt checkpoint (truncated payload)");
  return p;
}

// ---- Core math ---------------------------------------------------------------

namespace {

constexpr double kLnEps = 1e-5;

// out[T x N] = in[T x M] * W[M x N] + b
template <class Real>
void matmul_bias(const Real* in, const Real* w, const Real* b, Real* out, int T, int M,
                 int N) {
  for (int t = 0; t < T; ++t) {
    const Real* x = in + static_cast<size_t>(t) * M;
    Real* y = out + static_cast<size_t>(t) * N;
    for (int j = 0; j < N; ++j) y[j] = b ? b[j] : Real(0);
    for (int i = 0; i < M; ++i) {
      Real a = x[i];
      if (a == Real(0)) continue;
      const Real* wrow = w + static_cast<size_t>(i) * N;
      for (int j = 0; j < N; ++j) y[j] += a * wrow[j];
    }
  }
}

// Backward of matmul_bias: accumulates gw, gb and din.
template <class Real>
void matmul_bias_backward(const Real* in, const Real* w, const Real* dout, Real* gw,
                          Real* gb, Real* din, int T, int M, int N) {
  for (int t = 0; t < T; ++t) {
    const Real* x = in + static_cast<size_t>(t) * M;
    const Real* dy = dout + static_cast<size_t>(t) * N;
    if (gb)
      for (int j = 0; j < N; ++j) gb[j] += dy[j];
    for (int i = 0; i < M; ++i) {
      const Real* wrow = w + static_cast<size_t>(i) * N;
      Real* gwrow = gw + static_cast<size_t>(i) * N;
      Real xi = x[i];
      Real acc = 0;
      for (int j = 0; j < N; ++j) {
        gwrow[j] += xi * dy[j];
        acc += dy[j] * wrow[j];
      }
      if (din) din[static_cast<size_t>(t) * M + i] += acc;
    }
  }
}

template <class Real>
void layernorm_forward(const Real* x, const Real* g, const Real* b, Real* out, Real* mean,
                       Real* rstd, int T, int D) {
  for (int t = 0; t < T; ++t) {
    const Real* xt = x + static_cast<size_t>(t) * D;
    Real* yt = out + static_cast<size_t>(t) * D;
    Real m = 0;
    for (int i = 0; i < D; ++i) m += xt[i];
    m /= D;
    Real var = 0;
    for (int i = 0; i < D; ++i) {
      Real d = xt[i] - m;
      var += d * d;
    }
    var /= D;
    Real r = Real(1) / std::sqrt(var + Real(kLnEps));
    for (int i = 0; i < D; ++i) yt[i] = (xt[i] - m) * r * g[i] + b[i];
    mean[t] = m;
    rstd[t] = r;
  }
}

template <class Real>
void layernorm_backward(const Real* x, const Real* g, const Real* mean, const Real* rstd,
                        const Real* dy, Real* gg, Real* gb, Real* dx, int T, int D) {
  for (int t = 0; t < T; ++t) {
    const Real* xt = x + static_cast<size_t>(t) * D;
    const Real* dyt = dy + static_cast<size_t>(t) * D;
    Real* dxt = dx + static_cast<size_t>(t) * D;
    Real m = mean[t], r = rstd[t];
    Real sum_dxhat = 0, sum_dxhat_xhat = 0;
    for (int i = 0; i < D; ++i) {
      Real xhat = (xt[i] - m) * r;
      Real dxhat = dyt[i] * g[i];
      gg[i] += dyt[i] * xhat;
      gb[i] += dyt[i];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    Real inv_d = Real(1) / D;
    for (int i = 0; i < D; ++i) {
      Real xhat = (xt[i] - m) * r;
      Real dxhat = dyt[i] * g[i];
      dxt[i] += r * (dxhat - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <class Real>
Real gelu(Real x) {
  Real u = Real(kGeluC) * (x + Real(kGeluA) * x * x * x);
  return Real(0.5) * x * (Real(1) + std::tanh(u));
}

template <class Real>
Real gelu_grad(Real x) {
  Real u = Real(kGeluC) * (x + Real(kGeluA) * x * x * x);
  Real t = std::tanh(u);
  Real du = Real(kGeluC) * (Real(1) + Real(3 * kGeluA) * x * x);
  return Real(0.5) * (Real(1) + t) + Real(0.5) * x * (Real(1) - t * t) * du;
}

// Row-wise log-softmax; returns the row entropy if wanted.
template <class Real>
void log_softmax_row(const Real* z, Real* lp, int V) {
  Real mx = z[0];
  for (int v = 1; v < V; ++v) mx = std::max(mx, z[v]);
  Real sum = 0;
  for (int v = 0; v < V; ++v) sum += std::exp(z[v] - mx);
  Real lse = mx + std::log(sum);
  for (int v = 0; v < V; ++v) lp[v] = z[v] - lse;
}

template <class Real>
Real row_entropy(const Real* lp, int V) {
  Real h = 0;
  for (int v = 0; v < V; ++v) h -= std::exp(lp[v]) * lp[v];
  return h;
}

// ---- Cached run forward/backward ---------------------------------------------

template <class Real>
struct Run {
  int t0 = 0;
  int T = 0;
  std::vector<int> tokens;
  std::vector<Real> emb;
  struct Layer {
    std::vector<Real> ln1_out, ln1_mean, ln1_rstd;
    std::vector<Real> qkv;  // T x 3d
    std::vector<Real> att;  // h x T x span_max
    std::vector<Real> att_mix, res1;
    std::vector<Real> ln2_out, ln2_mean, ln2_rstd;
    std::vector<Real> fc_pre, fc_act, res2;
  };
  std::vector<Layer> layers;
  // logits bookkeeping: pos_to_row[i] >= 0 when row i has log-probabilities
  std::vector<int> pos_to_row;
  std::vector<int> row_to_pos;
  std::vector<Real> lnf_out, lnf_mean, lnf_rstd;  // rows x d / rows
  std::vector<Real> logprobs;                     // rows x V
  std::vector<Real> entropies;                    // rows

  const Real* key(int layer, int s, int d) const {
    return layers[static_cast<size_t>(layer)].qkv.data() +
           static_cast<size_t>(s) * 3 * d + d;
  }
  const Real* val(int layer, int s, int d) const {
    return layers[static_cast<size_t>(layer)].qkv.data() +
           static_cast<size_t>(s) * 3 * d + 2 * d;
  }
};

template <class Real>
void forward_run(const PolicyParamsT<Real>& p, const ParamLayout& lay,
                 const std::vector<int>& tokens, int t0, const Run<Real>* hist,
                 const std::vector<bool>& want_logits, Run<Real>& run) {
  const int d = p.cfg.d_model;
  const int H = p.cfg.n_heads;
  const int dh = d / H;
  const int L = p.cfg.n_layers;
  const int V = p.vocab;
  const int T = static_cast<int>(tokens.size());
  const int span_max = t0 + T;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  const Real* P = p.data.data();

  run.t0 = t0;
  run.T = T;
  run.tokens = tokens;
  run.layers.resize(static_cast<size_t>(L));
  run.emb.assign(static_cast<size_t>(T) * d, Real(0));
  for (int t = 0; t < T; ++t) {
    const Real* wte = P + lay.wte + static_cast<size_t>(tokens[static_cast<size_t>(t)]) * d;
    const Real* wpe = P + lay.wpe + static_cast<size_t>(t0 + t) * d;
    Real* e = run.emb.data() + static_cast<size_t>(t) * d;
    for (int i = 0; i < d; ++i) e[i] = wte[i] + wpe[i];
  }

  const Real* stream = run.emb.data();
  for (int l = 0; l < L; ++l) {
    auto& lc = run.layers[static_cast<size_t>(l)];
    const auto& w = lay.layers[static_cast<size_t>(l)];
    lc.ln1_out.assign(static_cast<size_t>(T) * d, Real(0));
    lc.ln1_mean.assign(static_cast<size_t>(T), Real(0));
    lc.ln1_rstd.assign(static_cast<size_t>(T), Real(0));
    layernorm_forward(stream, P + w.ln1_g, P + w.ln1_b, lc.ln1_out.data(),
                      lc.ln1_mean.data(), lc.ln1_rstd.data(), T, d);

    lc.qkv.assign(static_cast<size_t>(T) * 3 * d, Real(0));
    matmul_bias(lc.ln1_out.data(), P + w.w_qkv, P + w.b_qkv, lc.qkv.data(), T, d, 3 * d);

    lc.att.assign(static_cast<size_t>(H) * T * span_max, Real(0));
    lc.att_mix.assign(static_cast<size_t>(T) * d, Real(0));
    const Run<Real>* hrun = hist;
    for (int hh = 0; hh < H; ++hh) {
      for (int i = 0; i < T; ++i) {
        const Real* q = lc.qkv.data() + static_cast<size_t>(i) * 3 * d + hh * dh;
        Real* att = lc.att.data() +
                    (static_cast<size_t>(hh) * T + static_cast<size_t>(i)) * span_max;
        int span = t0 + i + 1;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (int s = 0; s < span; ++s) {
          const Real* k = (s < t0) ? hrun->key(l, s, d) + hh * dh
                                   : run.key(l, s - t0, d) + hh * dh;
          Real acc = 0;
          for (int c = 0; c < dh; ++c) acc += q[c] * k[c];
          acc *= scale;
          att[s] = acc;
          mx = std::max(mx, acc);
        }
        Real sum = 0;
        for (int s = 0; s < span; ++s) {
          att[s] = std::exp(att[s] - mx);
          sum += att[s];
        }
        Real inv = Real(1) / sum;
        for (int s = 0; s < span; ++s) att[s] *= inv;
        Real* mix = lc.att_mix.data() + static_cast<size_t>(i) * d + hh * dh;
        for (int c = 0; c < dh; ++c) mix[c] = 0;
        for (int s = 0; s < span; ++s) {
          const Real* v = (s < t0) ? hrun->val(l, s, d) + hh * dh
                                   : run.val(l, s - t0, d) + hh * dh;
          Real a = att[s];
          for (int c = 0; c < dh; ++c) mix[c] += a * v[c];
        }
      }
    }

    lc.res1.assign(static_cast<size_t>(T) * d, Real(0));
    matmul_bias(lc.att_mix.data(), P + w.w_ao, P + w.b_ao, lc.res1.data(), T, d, d);
    for (size_t i = 0; i < lc.res1.size(); ++i) lc.res1[i] += stream[i];

    lc.ln2_out.assign(static_cast<size_t>(T) * d, Real(0));
    lc.ln2_mean.assign(static_cast<size_t>(T), Real(0));
    lc.ln2_rstd.assign(static_cast<size_t>(T), Real(0));
    layernorm_forward(lc.res1.data(), P + w.ln2_g, P + w.ln2_b, lc.ln2_out.data(),
                      lc.ln2_mean.data(), lc.ln2_rstd.data(), T, d);

    int f = 4 * d;
    lc.fc_pre.assign(static_cast<size_t>(T) * f, Real(0));
    matmul_bias(lc.ln2_out.data(), P + w.w_fc, P + w.b_fc, lc.fc_pre.data(), T, d, f);
    lc.fc_act.resize(lc.fc_pre.size());
    for (size_t i = 0; i < lc.fc_pre.size(); ++i) lc.fc_act[i] = gelu(lc.fc_pre[i]);

    lc.res2.assign(static_cast<size_t>(T) * d, Real(0));
    matmul_bias(lc.fc_act.data(), P + w.w_proj, P + w.b_proj, lc.res2.data(), T, d * 4, d);
    for (size_t i = 0; i < lc.res2.size(); ++i) lc.res2[i] += lc.res1[i];

    stream = lc.res2.data();
  }

  run.pos_to_row.assign(static_cast<size_t>(T), -1);
  run.row_to_pos.clear();
  for (int i = 0; i < T; ++i) {
    if (want_logits[static_cast<size_t>(i)]) {
      run.pos_to_row[static_cast<size_t>(i)] = static_cast<int>(run.row_to_pos.size());
      run.row_to_pos.push_back(i);
    }
  }
  int rows = static_cast<int>(run.row_to_pos.size());
  run.lnf_out.assign(static_cast<size_t>(rows) * d, Real(0));
  run.lnf_mean.assign(static_cast<size_t>(rows), Real(0));
  run.lnf_rstd.assign(static_cast<size_t>(rows), Real(0));
  run.logprobs.assign(static_cast<size_t>(rows) * V, Real(0));
  run.entropies.assign(static_cast<size_t>(rows), Real(0));
  std::vector<Real> logits(static_cast<size_t>(V));
  for (int r = 0; r < rows; ++r) {
    int i = run.row_to_pos[static_cast<size_t>(r)];
    layernorm_forward(stream + static_cast<size_t>(i) * d, P + lay.lnf_g, P + lay.lnf_b,
                      run.lnf_out.data() + static_cast<size_t>(r) * d,
                      run.lnf_mean.data() + r, run.lnf_rstd.data() + r, 1, d);
    matmul_bias(run.lnf_out.data() + static_cast<size_t>(r) * d, P + lay.w_out,
                P + lay.b_out, logits.data(), 1, d, V);
    Real* lp = run.logprobs.data() + static_cast<size_t>(r) * V;
    log_softmax_row(logits.data(), lp, V);
    run.entropies[static_cast<size_t>(r)] = row_entropy(lp, V);
  }
}

// Backward through a run. dlogits has one row per logits row of the run.
// d_hist_k/d_hist_v (may be null) accumulate gradients w.r.t. history K/V,
// laid out [L][t0*d]. ext_dk/ext_dv (may be null) are incoming gradients
// w.r.t. this run's own K/V from later runs that attended into it.
template <class Real>
void backward_run(const PolicyParamsT<Real>& p, const ParamLayout& lay, const Run<Real>& run,
                  const Run<Real>* hist, const std::vector<Real>& dlogits,
                  std::vector<std::vector<Real>>* d_hist_k,
                  std::vector<std::vector<Real>>* d_hist_v,
                  const std::vector<std::vector<Real>>* ext_dk,
                  const std::vector<std::vector<Real>>* ext_dv, Real* grad) {
  const int d = p.cfg.d_model;
  const int H = p.cfg.n_heads;
  const int dh = d / H;
  const int L = p.cfg.n_layers;
  const int V = p.vocab;
  const int T = run.T;
  const int t0 = run.t0;
  const int span_max = t0 + T;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  const Real* P = p.data.data();
  const int f = 4 * d;

  std::vector<Real> dstream(static_cast<size_t>(T) * d, Real(0));

  // Head: dlogits -> lnf -> stream.
  int rows = static_cast<int>(run.row_to_pos.size());
  std::vector<Real> d_lnf(static_cast<size_t>(rows) * d, Real(0));
  const Real* stream_final =
      (L > 0) ? run.layers[static_cast<size_t>(L - 1)].res2.data() : run.emb.data();
  for (int r = 0; r < rows; ++r) {
    int i = run.row_to_pos[static_cast<size_t>(r)];
    const Real* dz = dlogits.data() + static_cast<size_t>(r) * V;
    matmul_bias_backward(run.lnf_out.data() + static_cast<size_t>(r) * d, P + lay.w_out, dz,
                         grad + lay.w_out, grad + lay.b_out,
                         d_lnf.data() + static_cast<size_t>(r) * d, 1, d, V);
    layernorm_backward(stream_final + static_cast<size_t>(i) * d, P + lay.lnf_g,
                       run.lnf_mean.data() + r, run.lnf_rstd.data() + r,
                       d_lnf.data() + static_cast<size_t>(r) * d, grad + lay.lnf_g,
                       grad + lay.lnf_b, dstream.data() + static_cast<size_t>(i) * d, 1, d);
  }

  std::vector<Real> d_res1(static_cast<size_t>(T) * d);
  std::vector<Real> d_fc_act(static_cast<size_t>(T) * f);
  std::vector<Real> d_fc_pre(static_cast<size_t>(T) * f);
  std::vector<Real> d_ln2(static_cast<size_t>(T) * d);
  std::vector<Real> d_mix(static_cast<size_t>(T) * d);
  std::vector<Real> dqkv(static_cast<size_t>(T) * 3 * d);
  std::vector<Real> d_ln1(static_cast<size_t>(T) * d);

  for (int l = L - 1; l >= 0; --l) {
    const auto& lc = run.layers[static_cast<size_t>(l)];
    const auto& w = lay.layers[static_cast<size_t>(l)];
    const Real* stream_in =
        (l == 0) ? run.emb.data() : run.layers[static_cast<size_t>(l - 1)].res2.data();

    // dstream currently holds d(res2). MLP backward.
    std::fill(d_res1.begin(), d_res1.end(), Real(0));
    std::fill(d_fc_act.begin(), d_fc_act.end(), Real(0));
    matmul_bias_backward(lc.fc_act.data(), P + w.w_proj, dstream.data(), grad + w.w_proj,
                         grad + w.b_proj, d_fc_act.data(), T, f, d);
    for (size_t i = 0; i < d_fc_pre.size(); ++i)
      d_fc_pre[i] = d_fc_act[i] * gelu_grad(lc.fc_pre[i]);
    std::fill(d_ln2.begin(), d_ln2.end(), Real(0));
    matmul_bias_backward(lc.ln2_out.data(), P + w.w_fc, d_fc_pre.data(), grad + w.w_fc,
                         grad + w.b_fc, d_ln2.data(), T, d, f);
    layernorm_backward(lc.res1.data(), P + w.ln2_g, lc.ln2_mean.data(), lc.ln2_rstd.data(),
                       d_ln2.data(), grad + w.ln2_g, grad + w.ln2_b, d_res1.data(), T, d);
    for (size_t i = 0; i < d_res1.size(); ++i) d_res1[i] += dstream[i];

    // Attention backward. d_res1 holds d(res1).
    std::fill(d_mix.begin(), d_mix.end(), Real(0));
    matmul_bias_backward(lc.att_mix.data(), P + w.w_ao, d_res1.data(), grad + w.w_ao,
                         grad + w.b_ao, d_mix.data(), T, d, d);

    std::fill(dqkv.begin(), dqkv.end(), Real(0));
    if (ext_dk) {
      const auto& ek = (*ext_dk)[static_cast<size_t>(l)];
      const auto& ev = (*ext_dv)[static_cast<size_t>(l)];
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < d; ++c) {
          dqkv[static_cast<size_t>(t) * 3 * d + d + c] += ek[static_cast<size_t>(t) * d + c];
          dqkv[static_cast<size_t>(t) * 3 * d + 2 * d + c] +=
              ev[static_cast<size_t>(t) * d + c];
        }
    }

    std::vector<Real> datt(static_cast<size_t>(span_max));
    for (int hh = 0; hh < H; ++hh) {
      for (int i = 0; i < T; ++i) {
        int span = t0 + i + 1;
        const Real* att = lc.att.data() +
                          (static_cast<size_t>(hh) * T + static_cast<size_t>(i)) * span_max;
        const Real* dmix = d_mix.data() + static_cast<size_t>(i) * d + hh * dh;
        // d att and d v
        Real sum_att_datt = 0;
        for (int s = 0; s < span; ++s) {
          const Real* v = (s < t0) ? hist->val(l, s, d) + hh * dh
                                   : run.val(l, s - t0, d) + hh * dh;
          Real acc = 0;
          for (int c = 0; c < dh; ++c) acc += dmix[c] * v[c];
          datt[static_cast<size_t>(s)] = acc;
          sum_att_datt += att[s] * acc;
          Real a = att[s];
          Real* dv = (s < t0)
                         ? (*d_hist_v)[static_cast<size_t>(l)].data() +
                               static_cast<size_t>(s) * d + hh * dh
                         : dqkv.data() + static_cast<size_t>(s - t0) * 3 * d + 2 * d + hh * dh;
          for (int c = 0; c < dh; ++c) dv[c] += a * dmix[c];
        }
        // d scores -> dq, dk
        const Real* q = lc.qkv.data() + static_cast<size_t>(i) * 3 * d + hh * dh;
        Real* dq = dqkv.data() + static_cast<size_t>(i) * 3 * d + hh * dh;
        for (int s = 0; s < span; ++s) {
          Real dscore = att[s] * (datt[static_cast<size_t>(s)] - sum_att_datt) * scale;
          if (dscore == Real(0)) continue;
          const Real* k = (s < t0) ? hist->key(l, s, d) + hh * dh
                                   : run.key(l, s - t0, d) + hh * dh;
          Real* dk = (s < t0) ? (*d_hist_k)[static_cast<size_t>(l)].data() +
                                    static_cast<size_t>(s) * d + hh * dh
                              : dqkv.data() + static_cast<size_t>(s - t0) * 3 * d + d + hh * dh;
          for (int c = 0; c < dh; ++c) {
            dq[c] += dscore * k[c];
            dk[c] += dscore * q[c];
          }
        }
      }
    }

    std::fill(d_ln1.begin(), d_ln1.end(), Real(0));
    matmul_bias_backward(lc.ln1_out.data(), P + w.w_qkv, dqkv.data(), grad + w.w_qkv,
                         grad + w.b_qkv, d_ln1.data(), T, d, 3 * d);
    // d(stream_in) = d_res1 (residual) + ln1 backward
    std::fill(dstream.begin(), dstream.end(), Real(0));
    layernorm_backward(stream_in, P + w.ln1_g, lc.ln1_mean.data(), lc.ln1_rstd.data(),
                       d_ln1.data(), grad + w.ln1_g, grad + w.ln1_b, dstream.data(), T, d);
    for (size_t i = 0; i < dstream.size(); ++i) dstream[i] += d_res1[i];
  }

  for (int t = 0; t < T; ++t) {
    const Real* ds = dstream.data() + static_cast<size_t>(t) * d;
    Real* gwte = grad + lay.wte + static_cast<size_t>(run.tokens[static_cast<size_t>(t)]) * d;
    Real* gwpe = grad + lay.wpe + static_cast<size_t>(t0 + t) * d;
    for (int i = 0; i < d; ++i) {
      gwte[i] += ds[i];
      gwpe[i] += ds[i];
    }
  }
}

}  // namespace

template <class Real>
std::vector<Real> full_logprobs(const PolicyParamsT<Real>& params,
                                const std::vector<int>& tokens) {
  if (static_cast<int>(tokens.size()) > params.cfg.context)
    throw RunError("context overflow in forward pass");
  ParamLayout lay = ParamLayout::make(params.cfg, params.vocab);
  Run<Real> run;
  std::vector<bool> want(tokens.size(), true);
  forward_run<Real>(params, lay, tokens, 0, nullptr, want, run);
  return run.logprobs;
}

// ---- Incremental (KV cache) path ----------------------------------------------

namespace {

template <class Real>
void head_logits(const PolicyParamsT<Real>& p, const ParamLayout& lay, const Real* stream,
                 std::vector<Real>& logits) {
  const int d = p.cfg.d_model;
  const int V = p.vocab;
  std::vector<Real> lnf(static_cast<size_t>(d));
  Real mean, rstd;
  layernorm_forward(stream, p.data.data() + lay.lnf_g, p.data.data() + lay.lnf_b, lnf.data(),
                    &mean, &rstd, 1, d);
  logits.assign(static_cast<size_t>(V), Real(0));
  matmul_bias(lnf.data(), p.data.data() + lay.w_out, p.data.data() + lay.b_out,
              logits.data(), 1, d, V);
}

template <class Real>
void incremental_step(const PolicyParamsT<Real>& p, const ParamLayout& lay, int token,
                      KvCacheT<Real>& cache) {
  const int d = p.cfg.d_model;
  const int H = p.cfg.n_heads;
  const int dh = d / H;
  const int L = p.cfg.n_layers;
  const int pos = cache.len;
  if (pos >= p.cfg.context) throw RunError("context overflow while sampling");
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
  const Real* P = p.data.data();

  std::vector<Real> x(static_cast<size_t>(d));
  {
    const Real* wte = P + lay.wte + static_cast<size_t>(token) * d;
    const Real* wpe = P + lay.wpe + static_cast<size_t>(pos) * d;
    for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] = wte[i] + wpe[i];
  }

  std::vector<Real> a(static_cast<size_t>(d)), qkv(static_cast<size_t>(3) * d),
      mix(static_cast<size_t>(d)), proj(static_cast<size_t>(d));
  std::vector<Real> att(static_cast<size_t>(pos) + 1);
  std::vector<Real> fc(static_cast<size_t>(4) * d);
  Real mean, rstd;
  for (int l = 0; l < L; ++l) {
    const auto& w = lay.layers[static_cast<size_t>(l)];
    layernorm_forward(x.data(), P + w.ln1_g, P + w.ln1_b, a.data(), &mean, &rstd, 1, d);
    matmul_bias(a.data(), P + w.w_qkv, P + w.b_qkv, qkv.data(), 1, d, 3 * d);
    Real* krow = cache.k[static_cast<size_t>(l)].data() + static_cast<size_t>(pos) * d;
    Real* vrow = cache.v[static_cast<size_t>(l)].data() + static_cast<size_t>(pos) * d;
    for (int c = 0; c < d; ++c) {
      krow[c] = qkv[static_cast<size_t>(d + c)];
      vrow[c] = qkv[static_cast<size_t>(2 * d + c)];
    }
    for (int hh = 0; hh < H; ++hh) {
      const Real* q = qkv.data() + hh * dh;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (int s = 0; s <= pos; ++s) {
        const Real* k =
            cache.k[static_cast<size_t>(l)].data() + static_cast<size_t>(s) * d + hh * dh;
        Real acc = 0;
        for (int c = 0; c < dh; ++c) acc += q[c] * k[c];
        acc *= scale;
        att[static_cast<size_t>(s)] = acc;
        mx = std::max(mx, acc);
      }
      Real sum = 0;
      for (int s = 0; s <= pos; ++s) {
        att[static_cast<size_t>(s)] = std::exp(att[static_cast<size_t>(s)] - mx);
        sum += att[static_cast<size_t>(s)];
      }
      Real inv = Real(1) / sum;
      Real* m = mix.data() + hh * dh;
      for (int c = 0; c < dh; ++c) m[c] = 0;
      for (int s = 0; s <= pos; ++s) {
        Real w_att = att[static_cast<size_t>(s)] * inv;
        const Real* v =
            cache.v[static_cast<size_t>(l)].data() + static_cast<size_t>(s) * d + hh * dh;
        for (int c = 0; c < dh; ++c) m[c] += w_att * v[c];
      }
    }
    matmul_bias(mix.data(), P + w.w_ao, P + w.b_ao, proj.data(), 1, d, d);
    for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] += proj[static_cast<size_t>(i)];

    layernorm_forward(x.data(), P + w.ln2_g, P + w.ln2_b, a.data(), &mean, &rstd, 1, d);
    matmul_bias(a.data(), P + w.w_fc, P + w.b_fc, fc.data(), 1, d, 4 * d);
    for (auto& u : fc) u = gelu(u);
    matmul_bias(fc.data(), P + w.w_proj, P + w.b_proj, proj.data(), 1, 4 * d, d);
    for (int i = 0; i < d; ++i) x[static_cast<size_t>(i)] += proj[static_cast<size_t>(i)];
  }
  cache.last_stream = x;
  cache.len = pos + 1;
}

template <class Real>
KvCacheT<Real> make_cache(const PolicyConfig& cfg) {
  KvCacheT<Real> cache;
  cache.k.assign(static_cast<size_t>(cfg.n_layers),
                 std::vector<Real>(static_cast<size_t>(cfg.context) * cfg.d_model));
  cache.v = cache.k;
  return cache;
}

template <class Real>
KvCacheT<Real> copy_cache(const PolicyConfig& cfg, const KvCacheT<Real>& src) {
  KvCacheT<Real> dst = make_cache<Real>(cfg);
  size_t filled = static_cast<size_t>(src.len) * cfg.d_model;
  for (size_t l = 0; l < src.k.size(); ++l) {
    std::copy_n(src.k[l].data(), filled, dst.k[l].data());
    std::copy_n(src.v[l].data(), filled, dst.v[l].data());
  }
  dst.len = src.len;
  dst.last_stream = src.last_stream;
  return dst;
}

// Nucleus draw over logits; returns the chosen token. The behavior logprob is
// looked up separately from the untempered log-softmax.
template <class Real>
int draw_token(const std::vector<Real>& logits, const SamplingConfig& cfg, RngStream& rng) {
  const int V = static_cast<int>(logits.size());
  if (cfg.temperature < 1e-9) {
    int best = 0;
    for (int v = 1; v < V; ++v)
      if (logits[static_cast<size_t>(v)] > logits[static_cast<size_t>(best)]) best = v;
    return best;
  }
  std::vector<Real> probs(static_cast<size_t>(V));
  Real mx = logits[0];
  for (int v = 1; v < V; ++v) mx = std::max(mx, logits[static_cast<size_t>(v)]);
  Real sum = 0;
  for (int v = 0; v < V; ++v) {
    probs[static_cast<size_t>(v)] =
        std::exp((logits[static_cast<size_t>(v)] - mx) / static_cast<Real>(cfg.temperature));
    sum += probs[static_cast<size_t>(v)];
  }
  double u = rng.next_double();
  if (cfg.top_p >= 1.0) {
    Real target = static_cast<Real>(u) * sum;
    Real cum = 0;
    for (int v = 0; v < V; ++v) {
      cum += probs[static_cast<size_t>(v)];
      if (cum > target) return v;
    }
    return V - 1;
  }
  std::vector<int> order(static_cast<size_t>(V));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs[static_cast<size_t>(a)] != probs[static_cast<size_t>(b)])
      return probs[static_cast<size_t>(a)] > probs[static_cast<size_t>(b)];
    return a < b;
  });
  Real need = static_cast<Real>(cfg.top_p) * sum;
  Real kept = 0;
  size_t n_keep = 0;
  while (n_keep < order.size() && kept < need) {
    kept += probs[static_cast<size_t>(order[n_keep])];
    ++n_keep;
  }
  Real target = static_cast<Real>(u) * kept;
  Real cum = 0;
  for (size_t i = 0; i < n_keep; ++i) {
    cum += probs[static_cast<size_t>(order[i])];
    if (cum > target) return order[i];
  }
  return order[n_keep - 1];
}

}  // namespace

template <class Real>
KvCacheT<Real> prefill(const PolicyParamsT<Real>& params, const std::vector<int>& tokens) {
  if (tokens.empty()) throw RunError("prefill requires at least one token");
  ParamLayout lay = ParamLayout::make(params.cfg, params.vocab);
  KvCacheT<Real> cache = make_cache<Real>(params.cfg);
  for (int tok : tokens) incremental_step(params, lay, tok, cache);
  return cache;
}

template <class Real>
SampledSeq sample_from_cache(const PolicyParamsT<Real>& params,
                             const KvCacheT<Real>& prompt_cache, const SamplingConfig& cfg,
                             RngStream& rng) {
  cfg.validate();
  ParamLayout lay = ParamLayout::make(params.cfg, params.vocab);
  KvCacheT<Real> cache = copy_cache(params.cfg, prompt_cache);
  const int eos = Vocab::instance().eos();
  SampledSeq out;
  std::vector<Real> logits, lp(static_cast<size_t>(params.vocab));
  head_logits(params, lay, cache.last_stream.data(), logits);
  for (int emitted = 0; emitted < cfg.max_new_tokens; ++emitted) {
    log_softmax_row(logits.data(), lp.data(), params.vocab);
    int tok = draw_token(logits, cfg, rng);
    out.tokens.push_back(tok);
    out.logprobs.push_back(static_cast<double>(lp[static_cast<size_t>(tok)]));
    if (tok == eos) {
      out.hit_eos = true;
      break;
    }
    if (emitted + 1 == cfg.max_new_tokens || cache.len == params.cfg.context) break;
    incremental_step(params, lay, tok, cache);
    head_logits(params, lay, cache.last_stream.data(), logits);
  }
  return out;
}

template <class Real>
SampledSeq sample(const PolicyParamsT<Real>& params, const std::vector<int>& prompt_tokens,
                  const SamplingConfig& cfg, RngStream& rng) {
  KvCacheT<Real> cache = prefill(params, prompt_tokens);
  return sample_from_cache(params, cache, cfg, rng);
}

template <class Real>
std::vector<Real> score_response(const PolicyParamsT<Real>& params,
                                 const KvCacheT<Real>& prompt_cache,
                                 const std::vector<int>& response) {
  ParamLayout lay = ParamLayout::make(params.cfg, params.vocab);
  KvCacheT<Real> cache = copy_cache(params.cfg, prompt_cache);
  std::vector<Real> out;
  out.reserve(response.size());
  std::vector<Real> logits, lp(static_cast<size_t>(params.vocab));
  head_logits(params, lay, cache.last_stream.data(), logits);
  for (size_t j = 0; j < response.size(); ++j) {
    log_softmax_row(logits.data(), lp.data(), params.vocab);
    out.push_back(lp[static_cast<size_t>(response[j])]);
    if (j + 1 < response.size()) {
      incremental_step(params, lay, response[j], cache);
      head_logits(params, lay, cache.last_stream.data(), logits);
    }
  }
  return out;
}

// ---- GroupPass -----------------------------------------------------------------

template <class Real>
struct GroupPass<Real>::Impl {
  const PolicyParamsT<Real>* params;
  ParamLayout lay;
  Run<Real> prompt_run;
  std::vector<Run<Real>> member_runs;
  std::vector<std::vector<int>> responses;
  int P = 0;
};

template <class Real>
GroupPass<Real>::GroupPass(const PolicyParamsT<Real>& params, const std::vector<int>& prompt,
                           const std::vector<std::vector<int>>& responses)
    : impl_(std::make_unique<Impl>()) {
  impl_->params = &params;
  impl_->lay = ParamLayout::make(params.cfg, params.vocab);
  impl_->responses = responses;
  impl_->P = static_cast<int>(prompt.size());
  if (prompt.empty()) throw RunError("group pass requires a non-empty prompt");
  for (const auto& r : responses) {
    if (r.empty()) throw RunError("group pass requires non-empty responses");
    if (impl_->P + static_cast<int>(r.size()) - 1 > params.cfg.context)
      throw RunError("context overflow in group pass");
  }

  std::vector<bool> want(prompt.size(), false);
  want.back() = true;  // the final prompt position predicts each first response token
  forward_run<Real>(params, impl_->lay, prompt, 0, nullptr, want, impl_->prompt_run);

  impl_->member_runs.resize(responses.size());
  for (size_t m = 0; m < responses.size(); ++m) {
    const auto& resp = responses[m];
    std::vector<int> inputs(resp.begin(), resp.end() - 1);
    std::vector<bool> want_m(inputs.size(), true);
    forward_run<Real>(params, impl_->lay, inputs, impl_->P, &impl_->prompt_run, want_m,
                impl_->member_runs[m]);
  }
}

template <class Real>
GroupPass<Real>::~GroupPass() = default;
template <class Real>
GroupPass<Real>::GroupPass(GroupPass&&) noexcept = default;
template <class Real>
GroupPass<Real>& GroupPass<Real>::operator=(GroupPass&&) noexcept = default;

template <class Real>
int GroupPass<Real>::members() const {
  return static_cast<int>(impl_->responses.size());
}

template <class Real>
Real GroupPass<Real>::taken_logprob(int member, int j) const {
  const int V = impl_->params->vocab;
  int y = impl_->responses[static_cast<size_t>(member)][static_cast<size_t>(j)];
  if (j == 0) return impl_->prompt_run.logprobs[static_cast<size_t>(y)];
  return impl_->member_runs[static_cast<size_t>(member)]
      .logprobs[static_cast<size_t>(j - 1) * V + y];
}

template <class Real>
Real GroupPass<Real>::entropy(int member, int j) const {
  if (j == 0) return impl_->prompt_run.entropies[0];
  return impl_->member_runs[static_cast<size_t>(member)].entropies[static_cast<size_t>(j - 1)];
}

namespace {

// dlogits row from taken-token and entropy coefficients:
//   dz[v] = sum_i ct_i * (1[v==y_i] - p[v])  +  ce * (-p[v] * (lp[v] + H))
template <class Real>
void build_dlogits_row(const Real* lp, Real entropy_val, const std::vector<std::pair<int, Real>>& taken,
                       Real ce_sum, Real* dz, int V) {
  Real ct_sum = 0;
  for (const auto& [y, ct] : taken) ct_sum += ct;
  for (int v = 0; v < V; ++v) {
    Real pv = std::exp(lp[v]);
    dz[v] = -ct_sum * pv - ce_sum * pv * (lp[v] + entropy_val);
  }
  for (const auto& [y, ct] : taken) dz[static_cast<size_t>(y)] += ct;
}

}  // namespace

template <class Real>
void GroupPass<Real>::backward(const std::vector<std::vector<Real>>& c_taken,
                               const std::vector<std::vector<Real>>& c_ent,
                               std::vector<Real>& grad) {
  auto& im = *impl_;
  const auto& params = *im.params;
  const int V = params.vocab;
  const int d = params.cfg.d_model;
  const int L = params.cfg.n_layers;

  std::vector<std::vector<Real>> d_hist_k(static_cast<size_t>(L)),
      d_hist_v(static_cast<size_t>(L));
  for (int l = 0; l < L; ++l) {
    d_hist_k[static_cast<size_t>(l)].assign(static_cast<size_t>(im.P) * d, Real(0));
    d_hist_v[static_cast<size_t>(l)].assign(static_cast<size_t>(im.P) * d, Real(0));
  }

  for (size_t m = 0; m < im.responses.size(); ++m) {
    const auto& run = im.member_runs[m];
    if (run.T == 0) continue;
    std::vector<Real> dlogits(static_cast<size_t>(run.T) * V, Real(0));
    for (int r = 0; r < run.T; ++r) {
      int j = r + 1;  // row r predicts response token j
      std::vector<std::pair<int, Real>> taken = {
          {im.responses[m][static_cast<size_t>(j)], c_taken[m][static_cast<size_t>(j)]}};
      build_dlogits_row(run.logprobs.data() + static_cast<size_t>(r) * V,
                        run.entropies[static_cast<size_t>(r)], taken,
                        c_ent[m][static_cast<size_t>(j)],
                        dlogits.data() + static_cast<size_t>(r) * V, V);
    }
    backward_run<Real>(params, im.lay, run, &im.prompt_run, dlogits, &d_hist_k, &d_hist_v, nullptr,
                 nullptr, grad.data());
  }

  // Shared final prompt position: every member's first response token.
  std::vector<Real> dlogits(static_cast<size_t>(V), Real(0));
  std::vector<std::pair<int, Real>> taken;
  Real ce_sum = 0;
  for (size_t m = 0; m < im.responses.size(); ++m) {
    taken.emplace_back(im.responses[m][0], c_taken[m][0]);
    ce_sum += c_ent[m][0];
  }
  build_dlogits_row(im.prompt_run.logprobs.data(), im.prompt_run.entropies[0], taken, ce_sum,
                    dlogits.data(), V);
  backward_run<Real>(params, im.lay, im.prompt_run, nullptr, dlogits, nullptr, nullptr, &d_hist_k,
               &d_hist_v, grad.data());
}

// ---- Explicit instantiations -----------------------------------------------------

template struct PolicyParamsT<float>;
template struct PolicyParamsT<double>;
template PolicyParamsT<float> init_policy_t<float>(uint64_t, const PolicyConfig&);
template PolicyParamsT<double> init_policy_t<double>(uint64_t, const PolicyConfig&);
template std::vector<float> full_logprobs<float>(const PolicyParamsT<float>&,
                                                 const std::vector<int>&);
template std::vector<double> full_logprobs<double>(const PolicyParamsT<double>&,
                                                   const std::vector<int>&);
template KvCacheT<float> prefill<float>(const PolicyParamsT<float>&, const std::vector<int>&);
template KvCacheT<double> prefill<double>(const PolicyParamsT<double>&,
                                          const std::vector<int>&);
template SampledSeq sample_from_cache<float>(const PolicyParamsT<float>&,
                                             const KvCacheT<float>&, const SamplingConfig&,
                                             RngStream&);
template SampledSeq sample_from_cache<double>(const PolicyParamsT<double>&,
                                              const KvCacheT<double>&, const SamplingConfig&,
                                              RngStream&);
template SampledSeq sample<float>(const PolicyParamsT<float>&, const std::vector<int>&,
                                  const SamplingConfig&, RngStream&);
template SampledSeq sample<double>(const PolicyParamsT<double>&, const std::vector<int>&,
                                   const SamplingConfig&, RngStream&);
template std::vector<float> score_response<float>(const PolicyParamsT<float>&,
                                                  const KvCacheT<float>&,
                                                  const std::vector<int>&);
template std::vector<double> score_response<double>(const PolicyParamsT<double>&,
                                                    const KvCacheT<double>&,
                                                    const std::vector<int>&);
template class GroupPass<float>;
template class GroupPass<double>;

}  // namespace cbrl
