#include "mot/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mot/detail/engine.hpp"
#include "mot/rng.hpp"

namespace mot::lm {

using detail::Engine;
using detail::OffsetTable;

void ModelConfig::validate() const {
  require(d_model > 0 && n_layers > 0 && n_heads > 0 && context_length > 0, Errc::config,
          "model dimensions must be positive");
  require(resolved_vocab() > 0, Errc::config, "vocab_size must be positive");
  require(d_model % n_heads == 0, Errc::config, "d_model must be divisible by n_heads");
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "{\"context_length\":" << context_length << ",\"d_model\":" << d_model
     << ",\"n_heads\":" << n_heads << ",\"n_layers\":" << n_layers
     << ",\"tied_head\":" << (tied_head ? "true" : "false")
     << ",\"vocab_size\":" << resolved_vocab() << "}";
  return os.str();
}

std::uint64_t ModelConfig::config_hash() const { return fnv1a(canonical()); }

std::vector<Segment> build_segments(const ModelConfig& cfg) {
  cfg.validate();
  OffsetTable t(cfg);
  std::vector<Segment> segs;
  auto add = [&segs](std::string name, std::size_t offset, std::vector<int> shape) {
    segs.push_back(Segment{std::move(name), offset, std::move(shape)});
  };
  add("tok_embed", t.tok, {t.V, t.d});
  add("pos_embed", t.pos, {t.C, t.d});
  for (int l = 0; l < t.L; ++l) {
    const auto& lo = t.layer[static_cast<std::size_t>(l)];
    std::string pre = "layer" + std::to_string(l) + ".";
    add(pre + "ln1.gamma", lo.ln1g, {t.d});
    add(pre + "ln1.beta", lo.ln1b, {t.d});
    add(pre + "attn.wq", lo.wq, {t.d, t.d});
    add(pre + "attn.wk", lo.wk, {t.d, t.d});
    add(pre + "attn.wv", lo.wv, {t.d, t.d});
    add(pre + "attn.wo", lo.wo, {t.d, t.d});
    add(pre + "ln2.gamma", lo.ln2g, {t.d});
    add(pre + "ln2.beta", lo.ln2b, {t.d});
    add(pre + "mlp.w1", lo.w1, {t.hidden, t.d});
    add(pre + "mlp.w2", lo.w2, {t.d, t.hidden});
  }
  add("ln_f.gamma", t.lnfg, {t.d});
  add("ln_f.beta", t.lnfb, {t.d});
  if (!cfg.tied_head) add("head.w", t.head, {t.V, t.d});
  return segs;
}

void require_same_layout(const ParameterVector& a, const ParameterVector& b) {
  require(a.config_hash == b.config_hash, Errc::shape, "config hash mismatch between vectors");
  require(a.segments.size() == b.segments.size(), Errc::shape, "segment count mismatch");
  for (std::size_t i = 0; i < a.segments.size(); ++i) {
    const Segment& sa = a.segments[i];
    const Segment& sb = b.segments[i];
    if (sa.name != sb.name || sa.offset != sb.offset || sa.shape != sb.shape) {
      fail(Errc::shape, "segment layout differs at: " + sa.name);
    }
  }
  require(a.values.size() == b.values.size(), Errc::shape, "value count mismatch");
}

ParameterVector init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelConfig resolved = cfg;
  resolved.vocab_size = cfg.resolved_vocab();
  OffsetTable t(resolved);
  ParameterVector pv;
  pv.config = resolved;
  pv.config_hash = resolved.config_hash();
  pv.segments = build_segments(resolved);
  pv.values.assign(t.total, 0.0f);

  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(t.d));
  auto fill_normal = [&](std::size_t off, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      pv.values[off + i] = static_cast<float>(rng.normal() * scale);
    }
  };
  auto fill_const = [&](std::size_t off, std::size_t n, float v) {
    for (std::size_t i = 0; i < n; ++i) pv.values[off + i] = v;
  };

  std::size_t dd = static_cast<std::size_t>(t.d) * t.d;
  fill_normal(t.tok, static_cast<std::size_t>(t.V) * t.d);
  fill_normal(t.pos, static_cast<std::size_t>(t.C) * t.d);
  for (const auto& lo : t.layer) {
    fill_const(lo.ln1g, static_cast<std::size_t>(t.d), 1.0f);
    fill_normal(lo.wq, dd);
    fill_normal(lo.wk, dd);
    fill_normal(lo.wv, dd);
    fill_normal(lo.wo, dd);
    fill_const(lo.ln2g, static_cast<std::size_t>(t.d), 1.0f);
    fill_normal(lo.w1, static_cast<std::size_t>(t.hidden) * t.d);
    fill_normal(lo.w2, static_cast<std::size_t>(t.d) * t.hidden);
  }
  fill_const(t.lnfg, static_cast<std::size_t>(t.d), 1.0f);
  if (!resolved.tied_head) fill_normal(t.head, static_cast<std::size_t>(t.V) * t.d);
  return pv;
}

namespace {

void check_params(const ParameterVector& params, const OffsetTable& t) {
  require(params.values.size() == t.total, Errc::shape,
          "parameter count does not match model config");
  require(params.config_hash == params.config.config_hash(), Errc::integrity,
          "config hash does not bind to the stored config");
}

template <class Real>
double run_loss(const Engine<Real>& eng, const Real* p,
                const std::vector<TokenizedExample>& batch, std::vector<double>* grad_out) {
  require(!batch.empty(), Errc::precondition, "batch must be nonempty");
  long long mass = 0;
  for (const TokenizedExample& ex : batch) {
    require(ex.tokens.size() == ex.mask.size(), Errc::precondition,
            "tokens and mask must have equal length");
    for (std::size_t i = 1; i < ex.mask.size(); ++i) mass += ex.mask[i] ? 1 : 0;
  }
  require(mass > 0, Errc::precondition, "batch has no masked positions");
  const double inv_mass = 1.0 / static_cast<double>(mass);

  if (grad_out) {
    grad_out->assign(eng.total(), 0.0);
  }
  detail::Scratch<Real> scratch;
  std::vector<Real> dlogits;
  double loss_sum = 0.0;
  for (const TokenizedExample& ex : batch) {
    int masked = 0;
    if (grad_out) {
      dlogits.assign(ex.tokens.size() * static_cast<std::size_t>(eng.offsets().V), Real(0));
      loss_sum += eng.forward(p, ex.tokens, ex.mask, scratch, &masked, &dlogits, inv_mass);
      eng.backward(p, ex.tokens, scratch, dlogits, grad_out->data());
    } else {
      loss_sum += eng.forward(p, ex.tokens, ex.mask, scratch, &masked, nullptr, 0.0);
    }
  }
  return loss_sum * inv_mass;
}

}  // namespace

double loss_and_grad(const ParameterVector& params, const std::vector<TokenizedExample>& batch,
                     std::vector<double>& grad_out) {
  Engine<float> eng(params.config);
  check_params(params, eng.offsets());
  return run_loss<float>(eng, params.values.data(), batch, &grad_out);
}

double batch_loss(const ParameterVector& params, const std::vector<TokenizedExample>& batch) {
  Engine<float> eng(params.config);
  check_params(params, eng.offsets());
  return run_loss<float>(eng, params.values.data(), batch, nullptr);
}

double loss_and_grad_f64(const ModelConfig& cfg, const std::vector<double>& params,
                         const std::vector<TokenizedExample>& batch,
                         std::vector<double>& grad_out) {
  Engine<double> eng(cfg);
  require(params.size() == eng.total(), Errc::shape, "parameter count mismatch");
  return run_loss<double>(eng, params.data(), batch, &grad_out);
}

double batch_loss_f64(const ModelConfig& cfg, const std::vector<double>& params,
                      const std::vector<TokenizedExample>& batch) {
  Engine<double> eng(cfg);
  require(params.size() == eng.total(), Errc::shape, "parameter count mismatch");
  return run_loss<double>(eng, params.data(), batch, nullptr);
}

std::vector<float> forward_logits(const ParameterVector& params,
                                  const std::vector<int>& token_prefix) {
  Engine<float> eng(params.config);
  check_params(params, eng.offsets());
  require(!token_prefix.empty(), Errc::precondition, "prefix must be nonempty");
  require(static_cast<int>(token_prefix.size()) < params.config.context_length, Errc::length,
          "prefix must be shorter than the context window");
  auto st = eng.decode_init();
  std::vector<float> logits(static_cast<std::size_t>(eng.offsets().V));
  for (int tok : token_prefix) {
    eng.decode_step(params.values.data(), st, tok, logits.data());
  }
  return logits;
}

std::string generate(const ParameterVector& params, const std::string& prompt_text,
                     double temperature, int max_new_tokens, std::uint64_t seed) {
  require(temperature >= 0.0, Errc::config, "temperature must be nonnegative");
  require(max_new_tokens >= 0, Errc::config, "max_new_tokens must be nonnegative");
  Engine<float> eng(params.config);
  check_params(params, eng.offsets());

  std::vector<int> prefix = make_prompt_prefix(prompt_text);
  require(static_cast<int>(prefix.size()) < params.config.context_length, Errc::length,
          "prompt longer than the context window");

  auto st = eng.decode_init();
  std::vector<float> logits(static_cast<std::size_t>(eng.offsets().V));
  for (int tok : prefix) eng.decode_step(params.values.data(), st, tok, logits.data());

  Rng rng(seed);
  const int V = eng.offsets().V;
  std::string out;
  std::vector<double> probs(static_cast<std::size_t>(V));
  for (int produced = 0; produced < max_new_tokens; ++produced) {
    int tok;
    if (temperature == 0.0) {
      tok = 0;
      for (int i = 1; i < V; ++i) {
        if (logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(tok)]) tok = i;
      }
    } else {
      double mx = logits[0];
      for (int i = 1; i < V; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
      double denom = 0.0;
      for (int i = 0; i < V; ++i) {
        probs[static_cast<std::size_t>(i)] =
            std::exp((static_cast<double>(logits[static_cast<std::size_t>(i)]) - mx) /
                     temperature);
        denom += probs[static_cast<std::size_t>(i)];
      }
      double u = rng.uniform() * denom;
      tok = V - 1;
      double acc = 0.0;
      for (int i = 0; i < V; ++i) {
        acc += probs[static_cast<std::size_t>(i)];
        if (u < acc) {
          tok = i;
          break;
        }
      }
    }
    if (tok == Vocab::kEos) break;
    char c = vocab().character(tok);
    if (c != '\0') out.push_back(c);
    if (st.len >= params.config.context_length) break;
    eng.decode_step(params.values.data(), st, tok, logits.data());
  }
  return out;
}

}  // namespace mot::lm
