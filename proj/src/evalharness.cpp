#include "mot/evalharness.hpp"

#include <cmath>
#include <sstream>

#include "mot/merge.hpp"
#include "mot/rng.hpp"

namespace mot::eval {

void EvalConfig::validate() const {
  require(n_runs >= 1, Errc::config, "n_runs must be >= 1");
  require(temperature >= 0.0, Errc::config, "temperature must be nonnegative");
  require(max_new_tokens >= 1, Errc::config, "max_new_tokens must be >= 1");
}

std::string EvalConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "{\"max_new_tokens\":" << max_new_tokens << ",\"n_runs\":" << n_runs
     << ",\"split\":\"" << corpus::split_name(split) << "\",\"temperature\":" << temperature
     << "}";
  return os.str();
}

AccuracyResult accuracy(const lm::ParameterVector& params,
                        const std::vector<const corpus::Problem*>& problems,
                        const EvalConfig& ecfg, std::uint64_t seed) {
  ecfg.validate();
  require(!problems.empty(), Errc::precondition, "problem list must be nonempty");

  AccuracyResult out;
  out.per_run.reserve(static_cast<std::size_t>(ecfg.n_runs));
  for (int run = 0; run < ecfg.n_runs; ++run) {
    int hits = 0;
    for (const corpus::Problem* p : problems) {
      std::uint64_t gen_seed = derive_seed(seed, "gen|" + p->id, run);
      std::string text = lm::generate(params, p->prompt_text, ecfg.temperature,
                                      ecfg.max_new_tokens, gen_seed);
      std::optional<long long> ans = extract_answer(text);
      if (ans.has_value() && *ans == p->reference_answer) ++hits;
    }
    out.per_run.push_back(static_cast<double>(hits) / static_cast<double>(problems.size()));
  }

  double sum = 0.0;
  for (double s : out.per_run) sum += s;
  out.mean = sum / static_cast<double>(ecfg.n_runs);
  if (ecfg.n_runs > 1) {
    double ss = 0.0;
    for (double s : out.per_run) ss += (s - out.mean) * (s - out.mean);
    double sd = std::sqrt(ss / static_cast<double>(ecfg.n_runs - 1));
    out.stderr_ = sd / std::sqrt(static_cast<double>(ecfg.n_runs));
  }
  return out;
}

AccuracyResult accuracy_on_split(const lm::ParameterVector& params,
                                 const corpus::ProblemSet& ps, const EvalConfig& ecfg,
                                 std::uint64_t seed) {
  return accuracy(params, ps.of_split(ecfg.split), ecfg, seed);
}

RetentionResult retention_eval(const lm::ParameterVector& params,
                               const lm::ParameterVector& base_params,
                               const std::vector<const corpus::Problem*>& retention_problems,
                               const EvalConfig& ecfg, std::uint64_t seed) {
  RetentionResult out;
  out.tuned = accuracy(params, retention_problems, ecfg, seed);
  out.base = accuracy(base_params, retention_problems, ecfg, seed);
  out.delta = out.tuned.mean - out.base.mean;
  return out;
}

std::vector<double> default_lambda_grid(int points) {
  require(points >= 2, Errc::config, "lambda grid needs at least 2 points");
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    grid[static_cast<std::size_t>(i)] = static_cast<double>(i) / (points - 1);
  }
  grid.front() = 0.0;
  grid.back() = 1.0;
  return grid;
}

ProbeResult probe_curve(const lm::ParameterVector& base, const lm::ParameterVector& ckpt,
                        const std::vector<double>& grid,
                        const std::vector<const corpus::Problem*>& problems,
                        const EvalConfig& ecfg, std::uint64_t seed) {
  require(grid.size() >= 2, Errc::precondition, "lambda grid needs at least 2 points");
  require(grid.front() == 0.0 && grid.back() == 1.0, Errc::precondition,
          "lambda grid must include both endpoints");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    require(grid[i] >= 0.0 && grid[i] <= 1.0, Errc::precondition, "lambda out of range");
    if (i > 0) require(grid[i] > grid[i - 1], Errc::precondition, "lambda grid must be sorted");
  }

  ProbeResult out;
  out.lambda_grid = grid;
  out.scores.reserve(grid.size());
  for (double lam : grid) {
    lm::ParameterVector theta = merge::interpolate(base, ckpt, lam);
    out.scores.push_back(accuracy(theta, problems, ecfg, seed).mean);
  }

  for (std::size_t i = 1; i + 1 < out.scores.size(); ++i) {
    out.curvature += std::abs(out.scores[i + 1] - 2.0 * out.scores[i] + out.scores[i - 1]);
  }
  double peak = out.scores.front();
  for (double s : out.scores) {
    peak = std::max(peak, s);
    out.max_drop = std::max(out.max_drop, peak - s);
  }
  return out;
}

std::string probe_to_csv(const ProbeResult& probe) {
  std::ostringstream os;
  os.precision(10);
  os << "lambda,score\n";
  for (std::size_t i = 0; i < probe.lambda_grid.size(); ++i) {
    os << probe.lambda_grid[i] << "," << probe.scores[i] << "\n";
  }
  return os.str();
}

DynamicsResult dynamics_curves(
    const std::vector<std::pair<std::string, lm::ParameterVector>>& checkpoints,
    const std::vector<train::LossEntry>& step_losses, const corpus::DistillCorpus& probe_corpus,
    const std::vector<const corpus::Problem*>& problems, const EvalConfig& ecfg,
    std::uint64_t seed) {
  require(probe_corpus.size() > 0, Errc::config, "probe corpus must be nonempty");
  require(!checkpoints.empty(), Errc::precondition, "no checkpoints to evaluate");

  std::vector<lm::TokenizedExample> probe_batch;
  probe_batch.reserve(probe_corpus.size());
  for (const corpus::DistillExample& ex : probe_corpus.examples) {
    probe_batch.push_back(lm::make_example(ex.prompt_text, ex.target_text));
  }

  DynamicsResult out;
  out.minibatch_loss = step_losses;
  for (const auto& [label, params] : checkpoints) {
    out.probe_loss.emplace_back(label, lm::batch_loss(params, probe_batch));
    out.accuracy.emplace_back(label, accuracy(params, problems, ecfg, seed).mean);
  }
  return out;
}

std::string dynamics_loss_csv(const DynamicsResult& d) {
  std::ostringstream os;
  os.precision(10);
  os << "step,minibatch_loss\n";
  for (const train::LossEntry& e : d.minibatch_loss) {
    os << e.step << "," << e.loss << "\n";
  }
  return os.str();
}

std::string dynamics_checkpoint_csv(const DynamicsResult& d) {
  std::ostringstream os;
  os.precision(10);
  os << "checkpoint,probe_loss,accuracy\n";
  for (std::size_t i = 0; i < d.probe_loss.size(); ++i) {
    os << d.probe_loss[i].first << "," << d.probe_loss[i].second << ","
       << d.accuracy[i].second << "\n";
  }
  return os.str();
}

EvalReport make_report(const lm::ParameterVector& params, const corpus::ProblemSet& ps,
                       const EvalConfig& ecfg, std::uint64_t seed) {
  EvalReport rep;
  EvalConfig val_cfg = ecfg;
  val_cfg.split = corpus::Split::validation;
  EvalConfig test_cfg = ecfg;
  test_cfg.split = corpus::Split::test;
  rep.validation = accuracy_on_split(params, ps, val_cfg, derive_seed(seed, "eval-validation"));
  rep.test = accuracy_on_split(params, ps, test_cfg, derive_seed(seed, "eval-test"));
  rep.avg = 0.5 * (rep.validation.mean + rep.test.mean);
  return rep;
}

}  // namespace mot::eval
