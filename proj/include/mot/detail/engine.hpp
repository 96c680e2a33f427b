#pragma once

// Dense transformer kernels shared by the f32 production path and the f64
// finite-difference path. Everything here is deterministic and sequential;
// parameter-gradient accumulation is always 64-bit.

#include <cmath>
#include <cstddef>
#include <vector>

#include "mot/error.hpp"
#include "mot/model.hpp"

namespace mot::lm::detail {

struct LayerOffsets {
  std::size_t ln1g, ln1b, wq, wk, wv, wo, ln2g, ln2b, w1, w2;
};

// Flat-buffer offsets for every segment; the single source of truth for the
// checkpoint directory and the kernels.
struct OffsetTable {
  int V, d, L, H, C, hs, hidden;
  bool tied;
  std::size_t tok, pos;
  std::vector<LayerOffsets> layer;
  std::size_t lnfg, lnfb, head;
  std::size_t total;

  explicit OffsetTable(const ModelConfig& cfg) {
    tied = cfg.tied_head;
    V = cfg.resolved_vocab();
    d = cfg.d_model;
    L = cfg.n_layers;
    H = cfg.n_heads;
    C = cfg.context_length;
    hs = d / H;
    hidden = 4 * d;
    std::size_t at = 0;
    auto take = [&at](std::size_t n) {
      std::size_t o = at;
      at += n;
      return o;
    };
    tok = take(static_cast<std::size_t>(V) * d);
    pos = take(static_cast<std::size_t>(C) * d);
    layer.resize(static_cast<std::size_t>(L));
    for (auto& lo : layer) {
      lo.ln1g = take(d);
      lo.ln1b = take(d);
      lo.wq = take(static_cast<std::size_t>(d) * d);
      lo.wk = take(static_cast<std::size_t>(d) * d);
      lo.wv = take(static_cast<std::size_t>(d) * d);
      lo.wo = take(static_cast<std::size_t>(d) * d);
      lo.ln2g = take(d);
      lo.ln2b = take(d);
      lo.w1 = take(static_cast<std::size_t>(hidden) * d);
      lo.w2 = take(static_cast<std::size_t>(d) * hidden);
    }
    lnfg = take(d);
    lnfb = take(d);
    // Output projection: its own segment, or the token embedding when tied.
    head = tied ? tok : take(static_cast<std::size_t>(V) * d);
    total = at;
  }
};

inline constexpr double kLnEps = 1e-5;
inline constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluC = 0.044715;

// y = W x with W stored row-major [out][in].
template <class Real>
inline void matvec(const Real* W, const Real* x, Real* y, int out, int in) {
  for (int o = 0; o < out; ++o) {
    const Real* row = W + static_cast<std::size_t>(o) * in;
    Real acc = 0;
    for (int i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

// dx += W^T dy.
template <class Real>
inline void matvec_t_add(const Real* W, const Real* dy, Real* dx, int out, int in) {
  for (int o = 0; o < out; ++o) {
    const Real* row = W + static_cast<std::size_t>(o) * in;
    Real g = dy[o];
    if (g == Real(0)) continue;
    for (int i = 0; i < in; ++i) dx[i] += g * row[i];
  }
}

// dW += dy x^T, accumulated in 64-bit.
template <class Real>
inline void outer_add(double* dW, const Real* dy, const Real* x, int out, int in) {
  for (int o = 0; o < out; ++o) {
    double g = static_cast<double>(dy[o]);
    if (g == 0.0) continue;
    double* row = dW + static_cast<std::size_t>(o) * in;
    for (int i = 0; i < in; ++i) row[i] += g * static_cast<double>(x[i]);
  }
}

template <class Real>
inline Real gelu(Real x) {
  Real u = static_cast<Real>(kGeluK) * (x + static_cast<Real>(kGeluC) * x * x * x);
  return Real(0.5) * x * (Real(1) + std::tanh(u));
}

template <class Real>
inline Real gelu_grad(Real x) {
  Real u = static_cast<Real>(kGeluK) * (x + static_cast<Real>(kGeluC) * x * x * x);
  Real th = std::tanh(u);
  Real du = static_cast<Real>(kGeluK) * (Real(1) + Real(3) * static_cast<Real>(kGeluC) * x * x);
  return Real(0.5) * (Real(1) + th) + Real(0.5) * x * (Real(1) - th * th) * du;
}

// Forward LayerNorm; stores normalized values and reciprocal stddev.
template <class Real>
inline void layernorm(const Real* x, const Real* gamma, const Real* beta, int d, Real* y,
                      Real* xhat, Real* rstd_out) {
  Real mu = 0;
  for (int i = 0; i < d; ++i) mu += x[i];
  mu /= static_cast<Real>(d);
  Real var = 0;
  for (int i = 0; i < d; ++i) {
    Real c = x[i] - mu;
    var += c * c;
  }
  var /= static_cast<Real>(d);
  Real rstd = Real(1) / std::sqrt(var + static_cast<Real>(kLnEps));
  for (int i = 0; i < d; ++i) {
    xhat[i] = (x[i] - mu) * rstd;
    y[i] = gamma[i] * xhat[i] + beta[i];
  }
  *rstd_out = rstd;
}

// Backward LayerNorm: dy -> dx (+=), dgamma/dbeta accumulated in 64-bit.
template <class Real>
inline void layernorm_backward(const Real* dy, const Real* xhat, Real rstd, const Real* gamma,
                               int d, Real* dx_add, double* dgamma, double* dbeta) {
  Real mean_dxhat = 0;
  Real mean_dxhat_xhat = 0;
  for (int i = 0; i < d; ++i) {
    Real dxh = dy[i] * gamma[i];
    mean_dxhat += dxh;
    mean_dxhat_xhat += dxh * xhat[i];
    dgamma[i] += static_cast<double>(dy[i]) * static_cast<double>(xhat[i]);
    dbeta[i] += static_cast<double>(dy[i]);
  }
  mean_dxhat /= static_cast<Real>(d);
  mean_dxhat_xhat /= static_cast<Real>(d);
  for (int i = 0; i < d; ++i) {
    Real dxh = dy[i] * gamma[i];
    dx_add[i] += rstd * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
  }
}

// Per-sequence activation scratch, sized once per batch to the longest
// sequence and reused.
template <class Real>
struct Scratch {
  // residual stream snapshots: stream[l] = input to layer l; stream[L] = input to final LN
  std::vector<std::vector<Real>> stream;
  struct Layer {
    std::vector<Real> ln1_xhat, ln1_rstd, q, k, v, att_probs, att_concat;
    std::vector<Real> ln2_xhat, ln2_rstd, mlp_pre, mlp_act;
  };
  std::vector<Layer> layer;
  std::vector<Real> lnf_xhat, lnf_rstd;
  std::vector<Real> logits, probs;
  // backward buffers
  std::vector<Real> dstream, dq, dk, dv, datt_concat, dprobs;

  void resize(const OffsetTable& t, int T) {
    stream.assign(static_cast<std::size_t>(t.L) + 1, std::vector<Real>());
    for (auto& s : stream) s.assign(static_cast<std::size_t>(T) * t.d, Real(0));
    layer.resize(static_cast<std::size_t>(t.L));
    std::size_t td = static_cast<std::size_t>(T) * t.d;
    std::size_t tri = static_cast<std::size_t>(T) * (T + 1) / 2;
    for (auto& l : layer) {
      l.ln1_xhat.assign(td, Real(0));
      l.ln1_rstd.assign(static_cast<std::size_t>(T), Real(0));
      l.q.assign(td, Real(0));
      l.k.assign(td, Real(0));
      l.v.assign(td, Real(0));
      l.att_probs.assign(static_cast<std::size_t>(t.H) * tri, Real(0));
      l.att_concat.assign(td, Real(0));
      l.ln2_xhat.assign(td, Real(0));
      l.ln2_rstd.assign(static_cast<std::size_t>(T), Real(0));
      l.mlp_pre.assign(static_cast<std::size_t>(T) * t.hidden, Real(0));
      l.mlp_act.assign(static_cast<std::size_t>(T) * t.hidden, Real(0));
    }
    lnf_xhat.assign(td, Real(0));
    lnf_rstd.assign(static_cast<std::size_t>(T), Real(0));
    logits.assign(static_cast<std::size_t>(t.V), Real(0));
    probs.assign(static_cast<std::size_t>(t.V), Real(0));
    dstream.assign(td, Real(0));
    dq.assign(td, Real(0));
    dk.assign(td, Real(0));
    dv.assign(td, Real(0));
    datt_concat.assign(td, Real(0));
    dprobs.assign(static_cast<std::size_t>(T), Real(0));
  }
};

inline std::size_t tri_base(int t) { return static_cast<std::size_t>(t) * (t + 1) / 2; }

template <class Real>
class Engine {
 public:
  explicit Engine(const ModelConfig& cfg) : cfg_(cfg), t_(cfg) { cfg.validate(); }

  const OffsetTable& offsets() const { return t_; }
  std::size_t total() const { return t_.total; }

  // Full forward for one sequence, filling scratch. Returns the summed CE
  // over masked positions (64-bit) and the masked count.
  double forward(const Real* p, const std::vector<int>& tokens,
                 const std::vector<std::uint8_t>& mask, Scratch<Real>& s, int* masked_out,
                 std::vector<Real>* dlogits_rows, double inv_mass) const {
    const int T = static_cast<int>(tokens.size());
    require(T >= 2, Errc::precondition, "sequence too short");
    require(T <= t_.C, Errc::length,
            "sequence length " + std::to_string(T) + " exceeds context " + std::to_string(t_.C));
    for (int tok : tokens) {
      require(tok >= 0 && tok < t_.V, Errc::vocabulary, "token id out of range");
    }
    s.resize(t_, T);

    // embeddings
    for (int pos = 0; pos < T; ++pos) {
      const Real* te = p + t_.tok + static_cast<std::size_t>(tokens[pos]) * t_.d;
      const Real* pe = p + t_.pos + static_cast<std::size_t>(pos) * t_.d;
      Real* x = s.stream[0].data() + static_cast<std::size_t>(pos) * t_.d;
      for (int i = 0; i < t_.d; ++i) x[i] = te[i] + pe[i];
    }

    for (int l = 0; l < t_.L; ++l) block_forward(p, l, T, s);

    // final LN + head at masked positions
    double loss_sum = 0.0;
    int masked = 0;
    const Real* lnfg = p + t_.lnfg;
    const Real* lnfb = p + t_.lnfb;
    std::vector<Real> lnf_out(static_cast<std::size_t>(t_.d));
    for (int pos = 0; pos < T; ++pos) {
      Real* x = s.stream[t_.L].data() + static_cast<std::size_t>(pos) * t_.d;
      layernorm(x, lnfg, lnfb, t_.d, lnf_out.data(),
                s.lnf_xhat.data() + static_cast<std::size_t>(pos) * t_.d, &s.lnf_rstd[pos]);
      if (pos + 1 >= T || !mask[static_cast<std::size_t>(pos) + 1]) continue;
      // logits for predicting tokens[pos+1]
      matvec(p + t_.head, lnf_out.data(), s.logits.data(), t_.V, t_.d);
      int label = tokens[static_cast<std::size_t>(pos) + 1];
      double lse, p_label;
      softmax_ce(s.logits.data(), t_.V, label, s.probs.data(), &lse, &p_label);
      loss_sum += lse;
      ++masked;
      if (dlogits_rows) {
        Real* row = dlogits_rows->data() + static_cast<std::size_t>(pos) * t_.V;
        for (int vtok = 0; vtok < t_.V; ++vtok) {
          row[vtok] = static_cast<Real>(static_cast<double>(s.probs[vtok]) * inv_mass);
        }
        row[label] -= static_cast<Real>(inv_mass);
      }
    }
    *masked_out = masked;
    return loss_sum;
  }

  // Reverse pass matching forward(); accumulates parameter grads (64-bit).
  void backward(const Real* p, const std::vector<int>& tokens, Scratch<Real>& s,
                const std::vector<Real>& dlogits_rows, double* g) const {
    const int T = static_cast<int>(tokens.size());
    std::fill(s.dstream.begin(), s.dstream.end(), Real(0));
    std::vector<Real> lnf_out(static_cast<std::size_t>(t_.d));
    std::vector<Real> dlnf_out(static_cast<std::size_t>(t_.d));
    const Real* lnfg = p + t_.lnfg;
    const Real* lnfb = p + t_.lnfb;

    // head + final LN
    for (int pos = 0; pos < T; ++pos) {
      const Real* dlog = dlogits_rows.data() + static_cast<std::size_t>(pos) * t_.V;
      bool any = false;
      for (int vtok = 0; vtok < t_.V; ++vtok) {
        if (dlog[vtok] != Real(0)) {
          any = true;
          break;
        }
      }
      if (!any) continue;
      const Real* xhat = s.lnf_xhat.data() + static_cast<std::size_t>(pos) * t_.d;
      for (int i = 0; i < t_.d; ++i) lnf_out[i] = lnfg[i] * xhat[i] + lnfb[i];
      outer_add(g + t_.head, dlog, lnf_out.data(), t_.V, t_.d);
      std::fill(dlnf_out.begin(), dlnf_out.end(), Real(0));
      matvec_t_add(p + t_.head, dlog, dlnf_out.data(), t_.V, t_.d);
      layernorm_backward(dlnf_out.data(), xhat, s.lnf_rstd[pos], lnfg, t_.d,
                         s.dstream.data() + static_cast<std::size_t>(pos) * t_.d, g + t_.lnfg,
                         g + t_.lnfb);
    }

    for (int l = t_.L - 1; l >= 0; --l) block_backward(p, l, T, s, g);

    // embeddings
    for (int pos = 0; pos < T; ++pos) {
      const Real* dx = s.dstream.data() + static_cast<std::size_t>(pos) * t_.d;
      double* gtok = g + t_.tok + static_cast<std::size_t>(tokens[pos]) * t_.d;
      double* gpos = g + t_.pos + static_cast<std::size_t>(pos) * t_.d;
      for (int i = 0; i < t_.d; ++i) {
        gtok[i] += static_cast<double>(dx[i]);
        gpos[i] += static_cast<double>(dx[i]);
      }
    }
  }

  // Incremental decoding state: per-layer K/V rows for emitted positions,
  // plus reusable per-token scratch.
  struct Decode {
    int len = 0;
    std::vector<Real> k, v;  // [L][C][d]
    std::vector<Real> x, ln, xhat, q, att, tmp, hid, scores;
  };

  Decode decode_init() const {
    Decode st;
    st.k.assign(static_cast<std::size_t>(t_.L) * t_.C * t_.d, Real(0));
    st.v.assign(static_cast<std::size_t>(t_.L) * t_.C * t_.d, Real(0));
    st.x.assign(static_cast<std::size_t>(t_.d), Real(0));
    st.ln.assign(static_cast<std::size_t>(t_.d), Real(0));
    st.xhat.assign(static_cast<std::size_t>(t_.d), Real(0));
    st.q.assign(static_cast<std::size_t>(t_.d), Real(0));
    st.att.assign(static_cast<std::size_t>(t_.d), Real(0));
    st.tmp.assign(static_cast<std::size_t>(t_.d), Real(0));
    st.hid.assign(static_cast<std::size_t>(t_.hidden), Real(0));
    st.scores.assign(static_cast<std::size_t>(t_.C), Real(0));
    return st;
  }

  // Feeds one token; writes next-token logits (size V). Matches the training
  // forward at the same position: causality makes earlier-position state
  // independent of later tokens, and both paths use the same kernels.
  void decode_step(const Real* p, Decode& st, int token, Real* logits_out) const {
    require(token >= 0 && token < t_.V, Errc::vocabulary, "token id out of range");
    require(st.len < t_.C, Errc::length, "context window exhausted");
    const int pos = st.len;
    const int d = t_.d;
    std::vector<Real>&x = st.x, &ln = st.ln, &xhat = st.xhat, &q = st.q, &att = st.att,
    &tmp = st.tmp, &hid = st.hid, &scores = st.scores;
    Real rstd;

    const Real* te = p + t_.tok + static_cast<std::size_t>(token) * d;
    const Real* pe = p + t_.pos + static_cast<std::size_t>(pos) * d;
    for (int i = 0; i < d; ++i) x[i] = te[i] + pe[i];

    for (int l = 0; l < t_.L; ++l) {
      const LayerOffsets& lo = t_.layer[static_cast<std::size_t>(l)];
      Real* krow = st.k.data() + (static_cast<std::size_t>(l) * t_.C + pos) * d;
      Real* vrow = st.v.data() + (static_cast<std::size_t>(l) * t_.C + pos) * d;
      layernorm(x.data(), p + lo.ln1g, p + lo.ln1b, d, ln.data(), xhat.data(), &rstd);
      matvec(p + lo.wq, ln.data(), q.data(), d, d);
      matvec(p + lo.wk, ln.data(), krow, d, d);
      matvec(p + lo.wv, ln.data(), vrow, d, d);
      const Real scale = Real(1) / std::sqrt(static_cast<Real>(t_.hs));
      for (int h = 0; h < t_.H; ++h) {
        const int hoff = h * t_.hs;
        Real mx = Real(-1e30);
        for (int j = 0; j <= pos; ++j) {
          const Real* kj = st.k.data() + (static_cast<std::size_t>(l) * t_.C + j) * d + hoff;
          Real acc = 0;
          for (int i = 0; i < t_.hs; ++i) acc += q[hoff + i] * kj[i];
          scores[static_cast<std::size_t>(j)] = acc * scale;
          mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
        }
        Real denom = 0;
        for (int j = 0; j <= pos; ++j) {
          Real e = std::exp(scores[static_cast<std::size_t>(j)] - mx);
          scores[static_cast<std::size_t>(j)] = e;
          denom += e;
        }
        for (int i = 0; i < t_.hs; ++i) att[hoff + i] = 0;
        for (int j = 0; j <= pos; ++j) {
          Real w = scores[static_cast<std::size_t>(j)] / denom;
          const Real* vj = st.v.data() + (static_cast<std::size_t>(l) * t_.C + j) * d + hoff;
          for (int i = 0; i < t_.hs; ++i) att[hoff + i] += w * vj[i];
        }
      }
      matvec(p + lo.wo, att.data(), tmp.data(), d, d);
      for (int i = 0; i < d; ++i) x[i] += tmp[i];
      layernorm(x.data(), p + lo.ln2g, p + lo.ln2b, d, ln.data(), xhat.data(), &rstd);
      matvec(p + lo.w1, ln.data(), hid.data(), t_.hidden, d);
      for (int i = 0; i < t_.hidden; ++i) hid[i] = gelu(hid[i]);
      matvec(p + lo.w2, hid.data(), tmp.data(), d, t_.hidden);
      for (int i = 0; i < d; ++i) x[i] += tmp[i];
    }
    layernorm(x.data(), p + t_.lnfg, p + t_.lnfb, d, ln.data(), xhat.data(), &rstd);
    matvec(p + t_.head, ln.data(), logits_out, t_.V, d);
    ++st.len;
  }

 private:
  static void softmax_ce(const Real* logits, int V, int label, Real* probs, double* nll,
                         double* p_label) {
    Real mx = logits[0];
    for (int i = 1; i < V; ++i) mx = std::max(mx, logits[i]);
    double denom = 0.0;
    for (int i = 0; i < V; ++i) denom += std::exp(static_cast<double>(logits[i] - mx));
    for (int i = 0; i < V; ++i) {
      probs[i] = static_cast<Real>(std::exp(static_cast<double>(logits[i] - mx)) / denom);
    }
    double lse = std::log(denom) + static_cast<double>(mx);
    *nll = lse - static_cast<double>(logits[label]);
    *p_label = static_cast<double>(probs[label]);
  }

  void block_forward(const Real* p, int l, int T, Scratch<Real>& s) const {
    const LayerOffsets& lo = t_.layer[static_cast<std::size_t>(l)];
    const int d = t_.d;
    auto& sl = s.layer[static_cast<std::size_t>(l)];
    std::vector<Real> ln_out(static_cast<std::size_t>(d));
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(t_.hs));

    const std::vector<Real>& in = s.stream[static_cast<std::size_t>(l)];
    std::vector<Real>& out = s.stream[static_cast<std::size_t>(l) + 1];

    for (int pos = 0; pos < T; ++pos) {
      const Real* x = in.data() + static_cast<std::size_t>(pos) * d;
      layernorm(x, p + lo.ln1g, p + lo.ln1b, d, ln_out.data(),
                sl.ln1_xhat.data() + static_cast<std::size_t>(pos) * d, &sl.ln1_rstd[pos]);
      matvec(p + lo.wq, ln_out.data(), sl.q.data() + static_cast<std::size_t>(pos) * d, d, d);
      matvec(p + lo.wk, ln_out.data(), sl.k.data() + static_cast<std::size_t>(pos) * d, d, d);
      matvec(p + lo.wv, ln_out.data(), sl.v.data() + static_cast<std::size_t>(pos) * d, d, d);
    }

    for (int h = 0; h < t_.H; ++h) {
      const int hoff = h * t_.hs;
      for (int pos = 0; pos < T; ++pos) {
        Real* prow = sl.att_probs.data() +
                     (static_cast<std::size_t>(h) * tri_base(T) + tri_base(pos));
        const Real* qp = sl.q.data() + static_cast<std::size_t>(pos) * d + hoff;
        Real mx = Real(-1e30);
        for (int j = 0; j <= pos; ++j) {
          const Real* kj = sl.k.data() + static_cast<std::size_t>(j) * d + hoff;
          Real acc = 0;
          for (int i = 0; i < t_.hs; ++i) acc += qp[i] * kj[i];
          prow[j] = acc * scale;
          mx = std::max(mx, prow[j]);
        }
        Real denom = 0;
        for (int j = 0; j <= pos; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          denom += prow[j];
        }
        for (int j = 0; j <= pos; ++j) prow[j] /= denom;
        Real* o = sl.att_concat.data() + static_cast<std::size_t>(pos) * d + hoff;
        for (int i = 0; i < t_.hs; ++i) o[i] = 0;
        for (int j = 0; j <= pos; ++j) {
          const Real* vj = sl.v.data() + static_cast<std::size_t>(j) * d + hoff;
          Real w = prow[j];
          for (int i = 0; i < t_.hs; ++i) o[i] += w * vj[i];
        }
      }
    }

    std::vector<Real> proj(static_cast<std::size_t>(d));
    for (int pos = 0; pos < T; ++pos) {
      matvec(p + lo.wo, sl.att_concat.data() + static_cast<std::size_t>(pos) * d, proj.data(), d,
             d);
      const Real* x = in.data() + static_cast<std::size_t>(pos) * d;
      Real* y = out.data() + static_cast<std::size_t>(pos) * d;
      for (int i = 0; i < d; ++i) y[i] = x[i] + proj[i];

      layernorm(y, p + lo.ln2g, p + lo.ln2b, d, ln_out.data(),
                sl.ln2_xhat.data() + static_cast<std::size_t>(pos) * d, &sl.ln2_rstd[pos]);
      Real* pre = sl.mlp_pre.data() + static_cast<std::size_t>(pos) * t_.hidden;
      Real* act = sl.mlp_act.data() + static_cast<std::size_t>(pos) * t_.hidden;
      matvec(p + lo.w1, ln_out.data(), pre, t_.hidden, d);
      for (int i = 0; i < t_.hidden; ++i) act[i] = gelu(pre[i]);
      matvec(p + lo.w2, act, proj.data(), d, t_.hidden);
      for (int i = 0; i < d; ++i) y[i] += proj[i];
    }
  }

  void block_backward(const Real* p, int l, int T, Scratch<Real>& s, double* g) const {
    const LayerOffsets& lo = t_.layer[static_cast<std::size_t>(l)];
    const int d = t_.d;
    auto& sl = s.layer[static_cast<std::size_t>(l)];
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(t_.hs));

    std::vector<Real> ln_out(static_cast<std::size_t>(d)), dln(static_cast<std::size_t>(d));
    std::vector<Real> dact(static_cast<std::size_t>(t_.hidden)),
        dpre(static_cast<std::size_t>(t_.hidden));

    std::fill(s.dq.begin(), s.dq.end(), Real(0));
    std::fill(s.dk.begin(), s.dk.end(), Real(0));
    std::fill(s.dv.begin(), s.dv.end(), Real(0));
    std::fill(s.datt_concat.begin(), s.datt_concat.end(), Real(0));

    // MLP backward (also reconstructs resid1 = attn residual output).
    for (int pos = 0; pos < T; ++pos) {
      Real* dy = s.dstream.data() + static_cast<std::size_t>(pos) * d;  // d(out[pos])
      const Real* xhat2 = sl.ln2_xhat.data() + static_cast<std::size_t>(pos) * d;
      const Real* pre = sl.mlp_pre.data() + static_cast<std::size_t>(pos) * t_.hidden;
      const Real* act = sl.mlp_act.data() + static_cast<std::size_t>(pos) * t_.hidden;

      // dW2, dact
      outer_add(g + lo.w2, dy, act, d, t_.hidden);
      std::fill(dact.begin(), dact.end(), Real(0));
      matvec_t_add(p + lo.w2, dy, dact.data(), d, t_.hidden);
      for (int i = 0; i < t_.hidden; ++i) dpre[i] = dact[i] * gelu_grad(pre[i]);

      // ln2 input value (resid1) reconstruction for dW1's input argument:
      // ln2 output = gamma*xhat+beta
      const Real* g2 = p + lo.ln2g;
      const Real* b2 = p + lo.ln2b;
      for (int i = 0; i < d; ++i) ln_out[i] = g2[i] * xhat2[i] + b2[i];
      outer_add(g + lo.w1, dpre.data(), ln_out.data(), t_.hidden, d);
      std::fill(dln.begin(), dln.end(), Real(0));
      matvec_t_add(p + lo.w1, dpre.data(), dln.data(), t_.hidden, d);
      // dy stays (residual); add LN path into it
      layernorm_backward(dln.data(), xhat2, sl.ln2_rstd[pos], g2, d, dy, g + lo.ln2g,
                         g + lo.ln2b);
    }

    // Attention projection backward.
    for (int pos = 0; pos < T; ++pos) {
      const Real* dy = s.dstream.data() + static_cast<std::size_t>(pos) * d;  // d(resid1)
      outer_add(g + lo.wo, dy, sl.att_concat.data() + static_cast<std::size_t>(pos) * d, d, d);
      matvec_t_add(p + lo.wo, dy, s.datt_concat.data() + static_cast<std::size_t>(pos) * d, d, d);
    }

    // Attention core backward.
    for (int h = 0; h < t_.H; ++h) {
      const int hoff = h * t_.hs;
      for (int pos = 0; pos < T; ++pos) {
        const Real* prow = sl.att_probs.data() +
                           (static_cast<std::size_t>(h) * tri_base(T) + tri_base(pos));
        const Real* dout = s.datt_concat.data() + static_cast<std::size_t>(pos) * d + hoff;
        // dp_j = dout . v_j ; dv_j += p_j dout
        Real dot_pd = 0;
        for (int j = 0; j <= pos; ++j) {
          const Real* vj = sl.v.data() + static_cast<std::size_t>(j) * d + hoff;
          Real acc = 0;
          for (int i = 0; i < t_.hs; ++i) acc += dout[i] * vj[i];
          s.dprobs[static_cast<std::size_t>(j)] = acc;
          dot_pd += prow[j] * acc;
          Real* dvj = s.dv.data() + static_cast<std::size_t>(j) * d + hoff;
          Real w = prow[j];
          for (int i = 0; i < t_.hs; ++i) dvj[i] += w * dout[i];
        }
        // softmax backward: ds_j = p_j (dp_j - sum_k p_k dp_k), then QK^T
        const Real* qp = sl.q.data() + static_cast<std::size_t>(pos) * d + hoff;
        Real* dqp = s.dq.data() + static_cast<std::size_t>(pos) * d + hoff;
        for (int j = 0; j <= pos; ++j) {
          Real ds = prow[j] * (s.dprobs[static_cast<std::size_t>(j)] - dot_pd) * scale;
          if (ds == Real(0)) continue;
          const Real* kj = sl.k.data() + static_cast<std::size_t>(j) * d + hoff;
          Real* dkj = s.dk.data() + static_cast<std::size_t>(j) * d + hoff;
          for (int i = 0; i < t_.hs; ++i) {
            dqp[i] += ds * kj[i];
            dkj[i] += ds * qp[i];
          }
        }
      }
    }

    // Q/K/V projections + first LN backward.
    for (int pos = 0; pos < T; ++pos) {
      const Real* xhat1 = sl.ln1_xhat.data() + static_cast<std::size_t>(pos) * d;
      const Real* g1 = p + lo.ln1g;
      const Real* b1 = p + lo.ln1b;
      for (int i = 0; i < d; ++i) ln_out[i] = g1[i] * xhat1[i] + b1[i];
      std::fill(dln.begin(), dln.end(), Real(0));

      const Real* dqp = s.dq.data() + static_cast<std::size_t>(pos) * d;
      const Real* dkp = s.dk.data() + static_cast<std::size_t>(pos) * d;
      const Real* dvp = s.dv.data() + static_cast<std::size_t>(pos) * d;
      outer_add(g + lo.wq, dqp, ln_out.data(), d, d);
      outer_add(g + lo.wk, dkp, ln_out.data(), d, d);
      outer_add(g + lo.wv, dvp, ln_out.data(), d, d);
      matvec_t_add(p + lo.wq, dqp, dln.data(), d, d);
      matvec_t_add(p + lo.wk, dkp, dln.data(), d, d);
      matvec_t_add(p + lo.wv, dvp, dln.data(), d, d);

      // residual: d(in) = d(resid1) + LN1 path
      layernorm_backward(dln.data(), xhat1, sl.ln1_rstd[pos], g1, d,
                         s.dstream.data() + static_cast<std::size_t>(pos) * d, g + lo.ln1g,
                         g + lo.ln1b);
    }
  }

  ModelConfig cfg_;
  OffsetTable t_;
};

}  // namespace mot::lm::detail
