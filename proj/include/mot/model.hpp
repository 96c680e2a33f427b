#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mot/error.hpp"
#include "mot/vocab.hpp"

namespace mot::lm {

using mot::make_example;
using mot::TokenizedExample;

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int context_length = 256;
  int vocab_size = 0;  // 0 = use the canonical vocabulary size
  bool tied_head = false;

  int resolved_vocab() const { return vocab_size > 0 ? vocab_size : vocab().size(); }
  void validate() const;
  std::string canonical() const;       // stable one-line rendering
  std::uint64_t config_hash() const;   // digest of canonical()
};

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::vector<int> shape;
  std::size_t numel() const {
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    return n;
  }
};

// Flat f32 parameter buffer plus its named-segment directory. The segment
// list is a pure function of ModelConfig; config_hash binds the two. The
// originating config rides along so evaluation never needs out-of-band state.
struct ParameterVector {
  std::vector<float> values;
  std::vector<Segment> segments;
  std::uint64_t config_hash = 0;
  ModelConfig config;

  std::size_t size() const { return values.size(); }
};

// Segment directory for a config: embeddings, per-layer attention/MLP
// matrices and LayerNorm affines, final LayerNorm, untied output head.
// The network uses no bias terms outside LayerNorm.
std::vector<Segment> build_segments(const ModelConfig& cfg);

// Same-layout check; throws Errc::shape naming the first differing segment.
void require_same_layout(const ParameterVector& a, const ParameterVector& b);

// Weight matrices and embeddings drawn N(0, 1/d_model); LayerNorm gains 1,
// offsets 0. Deterministic in (cfg, seed).
ParameterVector init_params(const ModelConfig& cfg, std::uint64_t seed);

// Masked-mean cross-entropy over the batch (target and EOS positions only)
// plus the exact gradient in the params layout. Loss and cross-sequence
// gradient reductions accumulate in 64-bit. Throws Errc::length when a
// sequence exceeds the context window, Errc::precondition when no position
// in the batch is masked.
double loss_and_grad(const ParameterVector& params, const std::vector<TokenizedExample>& batch,
                     std::vector<double>& grad_out);

// Loss only (evaluation on a fixed corpus; no gradient buffers).
double batch_loss(const ParameterVector& params, const std::vector<TokenizedExample>& batch);

// Next-token logits after consuming token_prefix. Throws Errc::vocabulary on
// out-of-range ids, Errc::length when the prefix fills the context window.
std::vector<float> forward_logits(const ParameterVector& params,
                                  const std::vector<int>& token_prefix);

// Samples a completion for prompt_text (primed BOS + prompt + newline).
// temperature 0 decodes greedily; stops at EOS, max_new_tokens, or the
// context boundary. Returns generated text without the prompt or EOS.
std::string generate(const ParameterVector& params, const std::string& prompt_text,
                     double temperature, int max_new_tokens, std::uint64_t seed);

// 64-bit twin of loss_and_grad for the finite-difference suite: evaluates the
// same network with all-double arithmetic on caller-provided parameter values.
double loss_and_grad_f64(const ModelConfig& cfg, const std::vector<double>& params,
                         const std::vector<TokenizedExample>& batch, std::vector<double>& grad_out);
double batch_loss_f64(const ModelConfig& cfg, const std::vector<double>& params,
                      const std::vector<TokenizedExample>& batch);

}  // namespace mot::lm
