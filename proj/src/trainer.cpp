#include "mot/trainer.hpp"

#include <cmath>
#include <sstream>

#include "mot/rng.hpp"
#include "mot/vocab.hpp"

namespace mot::train {

void TrainConfig::validate() const {
  require(base_lr > 0.0, Errc::config, "base_lr must be positive");
  require(warmup_fraction >= 0.0 && warmup_fraction < 1.0, Errc::config,
          "warmup_fraction must be in [0,1)");
  require(grad_clip_norm > 0.0, Errc::config, "grad_clip_norm must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, Errc::config,
          "betas must be in [0,1)");
  require(weight_decay >= 0.0, Errc::config, "weight_decay must be nonnegative");
  require(adam_eps > 0.0, Errc::config, "adam_eps must be positive");
  require(batch_size >= 1, Errc::config, "batch_size must be positive");
  require(total_steps >= 1, Errc::config, "total_steps must be positive");
  require(schedule_offset >= 0, Errc::config, "schedule_offset must be nonnegative");
}

std::string TrainConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "train{base_lr=" << base_lr << ";betas=" << beta1 << "," << beta2
     << ";weight_decay=" << weight_decay << ";warmup_fraction=" << warmup_fraction
     << ";grad_clip_norm=" << grad_clip_norm << ";adam_eps=" << adam_eps
     << ";batch_size=" << batch_size << ";total_steps=" << total_steps << ";seed=" << seed
     << ";schedule_scope="
     << (schedule_scope == ScheduleScope::per_branch ? "per_branch" : "global")
     << ";schedule_offset=" << schedule_offset << "}";
  return os.str();
}

double lr_at(long long step, const TrainConfig& cfg) {
  cfg.validate();
  require(step >= 0 && step <= cfg.total_steps, Errc::config,
          "schedule step out of range: " + std::to_string(step));
  const long long warmup = static_cast<long long>(
      std::ceil(cfg.warmup_fraction * static_cast<double>(cfg.total_steps)));
  if (warmup > 0 && step < warmup) {
    return cfg.base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (step >= cfg.total_steps) return 0.0;
  const double span = static_cast<double>(cfg.total_steps - warmup);
  const double u = static_cast<double>(step - warmup) / span;
  return cfg.base_lr * 0.5 * (1.0 + std::cos(3.141592653589793238 * u));
}

TrainState init_state(const lm::ParameterVector& params, const TrainConfig& cfg) {
  cfg.validate();
  TrainState st;
  st.params = params;
  st.m.assign(params.values.size(), 0.0f);
  st.v.assign(params.values.size(), 0.0f);
  st.step = 0;
  st.data_seed = derive_seed(cfg.seed, "data-order");
  return st;
}

std::vector<lm::TokenizedExample> batch_for_step(const corpus::DistillCorpus& corpus,
                                                 long long step, int batch_size,
                                                 std::uint64_t data_seed) {
  const long long n = static_cast<long long>(corpus.size());
  require(n > 0, Errc::precondition, "corpus must be nonempty");
  const long long per_epoch = (n + batch_size - 1) / batch_size;  // last partial batch kept
  const long long epoch = step / per_epoch;
  const long long slot = step % per_epoch;
  Rng rng(derive_seed(data_seed, "epoch", epoch));
  std::vector<std::size_t> perm = rng.permutation(static_cast<std::size_t>(n));
  std::vector<lm::TokenizedExample> batch;
  for (long long i = slot * batch_size; i < std::min(n, (slot + 1) * batch_size); ++i) {
    const corpus::DistillExample& ex = corpus.examples[perm[static_cast<std::size_t>(i)]];
    batch.push_back(lm::make_example(ex.prompt_text, ex.target_text));
  }
  return batch;
}

void sft_step(TrainState& state, const corpus::DistillCorpus& corpus, const TrainConfig& cfg) {
  cfg.validate();
  std::vector<lm::TokenizedExample> batch =
      batch_for_step(corpus, state.step, cfg.batch_size, state.data_seed);

  std::vector<double> grad;
  const double loss = lm::loss_and_grad(state.params, batch, grad);
  if (!std::isfinite(loss)) {
    fail(Errc::divergence, "non-finite loss at step " + std::to_string(state.step + 1));
  }

  double norm_sq = 0.0;
  for (double gv : grad) norm_sq += gv * gv;
  double norm = std::sqrt(norm_sq);
  if (!std::isfinite(norm)) {
    fail(Errc::divergence, "non-finite gradient at step " + std::to_string(state.step + 1));
  }
  const double scale = norm > cfg.grad_clip_norm ? cfg.grad_clip_norm / norm : 1.0;

  const long long lr_index =
      cfg.schedule_scope == ScheduleScope::global ? cfg.schedule_offset + state.step : state.step;
  const double lr = lr_at(lr_index, cfg);

  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  float* p = state.params.values.data();
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double g = grad[i] * scale;
    const double m = cfg.beta1 * static_cast<double>(state.m[i]) + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * static_cast<double>(state.v[i]) + (1.0 - cfg.beta2) * g * g;
    state.m[i] = static_cast<float>(m);
    state.v[i] = static_cast<float>(v);
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    double pv = static_cast<double>(p[i]);
    pv -= lr * cfg.weight_decay * pv;                        // decoupled decay
    pv -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);      // adaptive step
    p[i] = static_cast<float>(pv);
  }

  ++state.step;
  state.loss_log.push_back(LossEntry{state.step, loss});
  state.grad_norm_log.push_back(norm * scale);
}

void train_steps(TrainState& state, const corpus::DistillCorpus& corpus, long long n,
                 const TrainConfig& cfg) {
  for (long long i = 0; i < n; ++i) sft_step(state, corpus, cfg);
}

BranchResult train_branch(const lm::ParameterVector& init, const corpus::DistillCorpus& corpus,
                          long long steps, const TrainConfig& cfg) {
  require(steps >= 1, Errc::precondition, "steps must be >= 1");
  require(corpus.size() > 0, Errc::precondition, "corpus must be nonempty");

  // Fail fast on sequences that cannot fit the context window.
  for (const corpus::DistillExample& ex : corpus.examples) {
    lm::TokenizedExample tok = lm::make_example(ex.prompt_text, ex.target_text);
    require(static_cast<int>(tok.tokens.size()) <= init.config.context_length, Errc::length,
            "example exceeds context window: " + ex.problem_id);
  }

  TrainConfig run_cfg = cfg;
  if (cfg.schedule_scope == ScheduleScope::per_branch) {
    run_cfg.total_steps = steps;
    run_cfg.schedule_offset = 0;
  }
  TrainState state = init_state(init, run_cfg);
  train_steps(state, corpus, steps, run_cfg);
  return BranchResult{std::move(state.params), std::move(state.loss_log)};
}

}  // namespace mot::train
