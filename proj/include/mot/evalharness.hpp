#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mot/answer.hpp"
#include "mot/corpus.hpp"
#include "mot/model.hpp"
#include "mot/trainer.hpp"

namespace mot::eval {

struct EvalConfig {
  int n_runs = 16;           // 16 for tables, 64-run regime available for probes
  double temperature = 0.6;
  int max_new_tokens = 224;
  corpus::Split split = corpus::Split::validation;

  void validate() const;
  std::string canonical() const;  // stable one-line rendering for manifests
};

struct AccuracyResult {
  double mean = 0.0;    // fraction in [0,1]
  double stderr_ = 0.0; // sample stddev of per-run scores / sqrt(n_runs)
  std::vector<double> per_run;
};

// n_runs independent seeded passes; each run samples one generation per
// problem and scores exact final-answer matches. Deterministic in seed and
// independent of problem order (per-problem derived seeds).
AccuracyResult accuracy(const lm::ParameterVector& params,
                        const std::vector<const corpus::Problem*>& problems,
                        const EvalConfig& ecfg, std::uint64_t seed);

// Convenience: evaluate one split of a problem set.
AccuracyResult accuracy_on_split(const lm::ParameterVector& params,
                                 const corpus::ProblemSet& ps, const EvalConfig& ecfg,
                                 std::uint64_t seed);

struct RetentionResult {
  double delta = 0.0;  // tuned - base, in accuracy fraction; negative = forgetting
  AccuracyResult tuned;
  AccuracyResult base;
};

RetentionResult retention_eval(const lm::ParameterVector& params,
                               const lm::ParameterVector& base_params,
                               const std::vector<const corpus::Problem*>& retention_problems,
                               const EvalConfig& ecfg, std::uint64_t seed);

struct ProbeResult {
  std::vector<double> lambda_grid;
  std::vector<double> scores;  // accuracy fraction per lambda
  double curvature = 0.0;      // sum of |second differences|
  double max_drop = 0.0;       // largest peak-to-later-trough fall
};

std::vector<double> default_lambda_grid(int points = 11);

// Accuracy along theta(lambda) = lambda*base + (1-lambda)*ckpt. Greater
// curvature = rougher reverse-merge landscape. Grid must be sorted within
// [0,1] and include both endpoints.
ProbeResult probe_curve(const lm::ParameterVector& base, const lm::ParameterVector& ckpt,
                        const std::vector<double>& grid,
                        const std::vector<const corpus::Problem*>& problems,
                        const EvalConfig& ecfg, std::uint64_t seed);

std::string probe_to_csv(const ProbeResult& probe);

// Training-dynamics series: per-step minibatch loss from the branch log,
// fixed-corpus loss re-evaluated at each stored checkpoint, and accuracy per
// checkpoint.
struct DynamicsResult {
  std::vector<train::LossEntry> minibatch_loss;             // every step
  std::vector<std::pair<std::string, double>> probe_loss;   // per checkpoint label
  std::vector<std::pair<std::string, double>> accuracy;     // per checkpoint label
};

DynamicsResult dynamics_curves(
    const std::vector<std::pair<std::string, lm::ParameterVector>>& checkpoints,
    const std::vector<train::LossEntry>& step_losses, const corpus::DistillCorpus& probe_corpus,
    const std::vector<const corpus::Problem*>& problems, const EvalConfig& ecfg,
    std::uint64_t seed);

// Two CSV tables: (step, minibatch_loss) and (checkpoint, probe_loss, accuracy).
std::string dynamics_loss_csv(const DynamicsResult& d);
std::string dynamics_checkpoint_csv(const DynamicsResult& d);

struct EvalReport {
  AccuracyResult validation;
  AccuracyResult test;
  double avg = 0.0;  // mean of the two split means
  std::optional<double> retention_delta;
};

EvalReport make_report(const lm::ParameterVector& params, const corpus::ProblemSet& ps,
                       const EvalConfig& ecfg, std::uint64_t seed);

}  // namespace mot::eval
