#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mot/corpus.hpp"
#include "mot/error.hpp"
#include "mot/model.hpp"

namespace mot::train {

// Whether the cosine schedule spans one branch run or one whole multi-round
// chain (schedule_offset then locates a branch inside the global span).
enum class ScheduleScope { per_branch, global };

struct TrainConfig {
  double base_lr = 3e-3;  // desk-scale default for the ~1e5-parameter student
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double warmup_fraction = 0.01;
  double grad_clip_norm = 1.0;
  double adam_eps = 1e-8;
  int batch_size = 16;
  long long total_steps = 250;
  std::uint64_t seed = 1;
  ScheduleScope schedule_scope = ScheduleScope::per_branch;
  long long schedule_offset = 0;  // used only with ScheduleScope::global

  void validate() const;
  std::string canonical() const;
};

// Linear warmup to base_lr over ceil(warmup_fraction * total_steps) steps,
// then cosine decay to zero at total_steps. Steps are 0-based; lr_at(0) is 0
// whenever a warmup ramp exists. Throws Errc::config outside [0, total].
double lr_at(long long step, const TrainConfig& cfg);

struct LossEntry {
  long long step = 0;  // 1-based: entry k is logged after completing step k
  double loss = 0.0;
};

struct TrainState {
  lm::ParameterVector params;
  std::vector<float> m;  // first-moment accumulator, params layout
  std::vector<float> v;  // second-moment accumulator, params layout
  long long step = 0;    // completed optimization steps
  std::uint64_t data_seed = 0;
  std::vector<LossEntry> loss_log;
  std::vector<double> grad_norm_log;  // post-clip global norms, per step
};

TrainState init_state(const lm::ParameterVector& params, const TrainConfig& cfg);

// One AdamW step on one seeded batch: shuffled-epoch sampling, masked-mean
// loss/grad, global-norm clip, decoupled weight decay on every parameter.
// Throws Errc::divergence (with the step number) on non-finite loss or grad.
void sft_step(TrainState& state, const corpus::DistillCorpus& corpus, const TrainConfig& cfg);

// Runs n further steps on an existing state (crash-resume entry point).
void train_steps(TrainState& state, const corpus::DistillCorpus& corpus, long long n,
                 const TrainConfig& cfg);

struct BranchResult {
  lm::ParameterVector params;
  std::vector<LossEntry> loss_log;
};

// Fresh optimizer state (zeroed moments), then `steps` steps. With
// per-branch scheduling the cosine span is exactly `steps`.
BranchResult train_branch(const lm::ParameterVector& init, const corpus::DistillCorpus& corpus,
                          long long steps, const TrainConfig& cfg);

// The deterministic batch for one step index (exposed for tests/replay).
std::vector<lm::TokenizedExample> batch_for_step(const corpus::DistillCorpus& corpus,
                                                 long long step, int batch_size,
                                                 std::uint64_t data_seed);

}  // namespace mot::train
