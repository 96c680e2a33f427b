#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mot/corpus.hpp"
#include "mot/error.hpp"
#include "mot/evalharness.hpp"
#include "mot/model.hpp"
#include "mot/trainer.hpp"

namespace mot::orch {

enum class Regime { MOT, STD, MTD, SELF };

const char* regime_name(Regime r);
Regime regime_from_name(const std::string& s);

// Round structure shared by all regimes: merge-trained runs consume
// rounds x steps_per_branch steps per teacher; continuous baselines consume
// baseline_total_steps with a checkpoint saved every checkpoint_every steps.
struct RoundSchedule {
  int rounds = 5;
  int steps_per_branch = 50;
  std::vector<std::string> teacher_pool;  // K = size; ignored by baselines
  long long baseline_total_steps = 250;
  long long checkpoint_every = 50;

  void validate() const;
  // True when the baseline budget equals the per-teacher merged budget, so
  // regime comparisons are step-for-step fair.
  bool fair_budget() const;
  std::string canonical() const;
};

struct Checkpoint {
  std::string label;
  lm::ParameterVector params;
};

// Canonical checkpoint labels: "round-007" / "step-000350".
std::string round_label(int t);
std::string step_label(long long s);

struct BranchLog {
  int round = 0;          // 1-based round index; 0 for continuous baselines
  std::string corpus_id;  // teacher id of the corpus this log trained on
  std::vector<train::LossEntry> loss_log;
};

// Everything the runner knows about the configs that shaped a run, in
// canonical string form, for the persisted manifest. Fields the runner cannot
// see (task/teacher configs) stay empty until the caller fills them.
struct ConfigSnapshot {
  std::string task_config;
  std::vector<std::string> teacher_specs;
  std::string model_config;
  std::string train_config;
  std::string schedule;
  std::string eval_config;
  std::map<std::string, std::uint64_t> corpus_digests;  // corpus id -> digest
  std::uint64_t seed_root = 0;
  std::uint64_t init_digest = 0;  // digest of the starting parameters
};

struct SelfDistillStats {
  long long total_traces = 0;
  long long correct_traces = 0;
  long long prompts_covered = 0;   // train prompts with >= 1 correct trace
  long long dropped_overlong = 0;  // filtered examples too long to train on
};

struct RunArtifacts {
  Regime regime = Regime::STD;
  std::vector<Checkpoint> checkpoints;  // [0] is always the "base" snapshot
  // checkpoint label -> split -> accuracy; filled by attach_evals.
  std::map<std::string, std::map<corpus::Split, eval::AccuracyResult>> evals;
  std::vector<BranchLog> branch_logs;
  // Serial loss curve: the run's own log for baselines, the across-branch
  // mean per step slot for merged runs.
  std::vector<train::LossEntry> train_loss;
  ConfigSnapshot snapshot;
  long long branch_steps = 0;  // optimizer steps summed over all branches
  long long serial_steps = 0;  // longest dependent chain of steps
  bool fairness_warning = false;
  std::uint64_t run_seed = 0;
  SelfDistillStats self_stats;  // meaningful only for Regime::SELF

  const Checkpoint& find_checkpoint(const std::string& label) const;
};

// Merged-teacher run: each round initializes one branch per pool teacher from
// the current parameters, trains it steps_per_branch steps on that teacher's
// corpus, and averages the branches into the next round's initialization.
// Branch seeds derive from (run seed, round, teacher id), so results do not
// depend on branch execution order. Divergence in any branch aborts the run
// naming the branch.
RunArtifacts run_mot(const lm::ParameterVector& base,
                     const std::map<std::string, corpus::DistillCorpus>& corpora,
                     const RoundSchedule& sched, const train::TrainConfig& tcfg);

struct RoundResult {
  lm::ParameterVector merged;
  std::vector<BranchLog> branch_logs;  // one entry per pool teacher
  std::vector<double> mean_losses;     // across-branch mean, steps_per_branch entries
};

// One merge round (branch trainings plus the average), shared by every
// merged-run entry point so they cannot drift apart numerically.
RoundResult run_round(const lm::ParameterVector& current,
                      const std::map<std::string, corpus::DistillCorpus>& corpora,
                      const RoundSchedule& sched, const train::TrainConfig& tcfg, int t);

// Continuous single-corpus baseline: baseline_total_steps steps, checkpoint
// every checkpoint_every steps. The aggregate-corpus variant differs only in
// the corpus it consumes.
RunArtifacts run_std(const lm::ParameterVector& base, const corpus::DistillCorpus& corpus,
                     const RoundSchedule& sched, const train::TrainConfig& tcfg);
RunArtifacts run_mtd(const lm::ParameterVector& base, const corpus::DistillCorpus& union_corpus,
                     const RoundSchedule& sched, const train::TrainConfig& tcfg);

// One merged-teacher run per pool variant, all sharing base, schedule, and
// seed, keyed by the '+'-joined variant ids; differences between variants are
// then attributable to pool composition alone.
std::map<std::string, RunArtifacts> run_pool_ablation(
    const lm::ParameterVector& base, const std::map<std::string, corpus::DistillCorpus>& corpora,
    const std::vector<std::vector<std::string>>& pool_variants, const RoundSchedule& sched,
    const train::TrainConfig& tcfg);

struct SamplingConfig {
  int n_samples = 16;
  double temperature = 0.6;
  int max_new_tokens = 224;

  void validate() const;
};

inline constexpr const char* kSelfTeacherId = "SELF";

// Student-as-teacher: the trained model samples n_samples traces per training
// prompt, the traces pass through answer filtering, and a fresh student is
// trained on the survivors with the continuous-baseline protocol. An empty
// filtered corpus aborts with the correct-trace statistics in the message.
// When corpus_out is non-null it receives the filtered corpus.
RunArtifacts run_self_distill(const lm::ParameterVector& trained,
                              const corpus::ProblemSet& problems, const SamplingConfig& sampling,
                              const lm::ParameterVector& fresh_base, const RoundSchedule& sched,
                              const train::TrainConfig& tcfg,
                              corpus::DistillCorpus* corpus_out = nullptr);

// Evaluates every checkpoint (optionally skipping the base snapshot) on the
// given splits with one shared seed per split, so checkpoint scores are
// paired comparisons.
void attach_evals(RunArtifacts& artifacts, const corpus::ProblemSet& ps,
                  const eval::EvalConfig& ecfg, std::uint64_t seed,
                  const std::vector<corpus::Split>& splits, bool include_base = true);

// Argmax of mean accuracy over the trained checkpoints (the base snapshot is
// never selected); ties break toward the earliest checkpoint. Requires an
// attached evaluation on eval_split for every trained checkpoint.
std::pair<std::string, lm::ParameterVector> select_best(const RunArtifacts& artifacts,
                                                        corpus::Split eval_split);

// (label, params) view over the checkpoints, for dynamics plumbing.
std::vector<std::pair<std::string, lm::ParameterVector>> checkpoint_pairs(
    const RunArtifacts& artifacts);

}  // namespace mot::orch
