#include "mot/orchestrator.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "mot/answer.hpp"
#include "mot/merge.hpp"
#include "mot/rng.hpp"

namespace mot::orch {

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::MOT: return "mot";
    case Regime::STD: return "std";
    case Regime::MTD: return "mtd";
    case Regime::SELF: return "self";
  }
  fail(Errc::config, "unknown regime");
}

Regime regime_from_name(const std::string& s) {
  if (s == "mot") return Regime::MOT;
  if (s == "std") return Regime::STD;
  if (s == "mtd") return Regime::MTD;
  if (s == "self") return Regime::SELF;
  fail(Errc::config, "unknown regime name: " + s);
}

void RoundSchedule::validate() const {
  require(rounds >= 1, Errc::config, "rounds must be >= 1");
  require(steps_per_branch >= 1, Errc::config, "steps_per_branch must be >= 1");
  require(baseline_total_steps >= 1, Errc::config, "baseline_total_steps must be >= 1");
  require(checkpoint_every >= 1, Errc::config, "checkpoint_every must be >= 1");
  require(baseline_total_steps % checkpoint_every == 0, Errc::config,
          "checkpoint_every must divide baseline_total_steps");
}

bool RoundSchedule::fair_budget() const {
  return baseline_total_steps ==
         static_cast<long long>(rounds) * static_cast<long long>(steps_per_branch);
}

std::string RoundSchedule::canonical() const {
  std::ostringstream os;
  os << "{\"baseline_total_steps\":" << baseline_total_steps << ",\"checkpoint_every\":"
     << checkpoint_every << ",\"rounds\":" << rounds << ",\"steps_per_branch\":"
     << steps_per_branch << ",\"teacher_pool\":[";
  for (std::size_t i = 0; i < teacher_pool.size(); ++i) {
    if (i > 0) os << ",";
    os << "\"" << teacher_pool[i] << "\"";
  }
  os << "]}";
  return os.str();
}

const Checkpoint& RunArtifacts::find_checkpoint(const std::string& label) const {
  for (const Checkpoint& ck : checkpoints) {
    if (ck.label == label) return ck;
  }
  fail(Errc::integrity, "no checkpoint labeled " + label);
}

void SamplingConfig::validate() const {
  require(n_samples >= 1, Errc::config, "n_samples must be >= 1");
  require(temperature >= 0.0, Errc::config, "temperature must be nonnegative");
  require(max_new_tokens >= 1, Errc::config, "max_new_tokens must be >= 1");
}

std::string round_label(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "round-%03d", t);
  return buf;
}

std::string step_label(long long s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step-%06lld", s);
  return buf;
}

namespace {

void require_fits_context(const corpus::DistillCorpus& c, int context_length) {
  for (const corpus::DistillExample& ex : c.examples) {
    lm::TokenizedExample tok = lm::make_example(ex.prompt_text, ex.target_text);
    require(static_cast<int>(tok.tokens.size()) <= context_length, Errc::length,
            "example for problem " + ex.problem_id + " exceeds the training context");
  }
}

void fill_common_snapshot(RunArtifacts& art, const RoundSchedule& sched,
                          const train::TrainConfig& tcfg) {
  art.snapshot.train_config = tcfg.canonical();
  art.snapshot.schedule = sched.canonical();
  art.snapshot.seed_root = tcfg.seed;
}

// Shared continuous-training body for the STD/MTD/SELF regimes.
RunArtifacts run_continuous(Regime regime, const lm::ParameterVector& base,
                            const corpus::DistillCorpus& corpus, const RoundSchedule& sched,
                            const train::TrainConfig& tcfg) {
  sched.validate();
  tcfg.validate();
  require(corpus.size() > 0, Errc::precondition, "training corpus is empty");
  require_fits_context(corpus, base.config.context_length);

  train::TrainConfig run_cfg = tcfg;
  run_cfg.total_steps = sched.baseline_total_steps;
  run_cfg.schedule_offset = 0;

  RunArtifacts art;
  art.regime = regime;
  art.run_seed = tcfg.seed;
  art.fairness_warning = !sched.fair_budget();
  art.branch_steps = sched.baseline_total_steps;
  art.serial_steps = sched.baseline_total_steps;
  art.checkpoints.push_back({"base", base});

  train::TrainState state = train::init_state(base, run_cfg);
  long long n_checkpoints = sched.baseline_total_steps / sched.checkpoint_every;
  for (long long i = 0; i < n_checkpoints; ++i) {
    train::train_steps(state, corpus, sched.checkpoint_every, run_cfg);
    art.checkpoints.push_back({step_label(state.step), state.params});
  }
  art.train_loss = state.loss_log;
  art.branch_logs.push_back({0, corpus.teacher_id, state.loss_log});

  fill_common_snapshot(art, sched, tcfg);
  art.snapshot.model_config = base.config.canonical();
  art.snapshot.corpus_digests[corpus.teacher_id] = corpus.content_digest();
  return art;
}

}  // namespace

RunArtifacts run_mot(const lm::ParameterVector& base,
                     const std::map<std::string, corpus::DistillCorpus>& corpora,
                     const RoundSchedule& sched, const train::TrainConfig& tcfg) {
  sched.validate();
  tcfg.validate();
  require(!sched.teacher_pool.empty(), Errc::config, "teacher pool is empty");
  {
    std::set<std::string> seen;
    for (const std::string& tid : sched.teacher_pool) {
      require(seen.insert(tid).second, Errc::config, "duplicate teacher in pool: " + tid);
    }
  }
  for (const std::string& tid : sched.teacher_pool) {
    auto it = corpora.find(tid);
    require(it != corpora.end(), Errc::precondition, "no corpus for pool teacher " + tid);
    require(it->second.size() > 0, Errc::precondition, "empty corpus for pool teacher " + tid);
  }

  const int K = static_cast<int>(sched.teacher_pool.size());
  RunArtifacts art;
  art.regime = Regime::MOT;
  art.run_seed = tcfg.seed;
  art.fairness_warning = !sched.fair_budget();
  art.serial_steps = static_cast<long long>(sched.rounds) * sched.steps_per_branch;
  art.branch_steps = art.serial_steps * K;
  art.checkpoints.push_back({"base", base});

  lm::ParameterVector current = base;
  for (int t = 1; t <= sched.rounds; ++t) {
    RoundResult round = run_round(current, corpora, sched, tcfg, t);
    current = std::move(round.merged);
    for (BranchLog& log : round.branch_logs) art.branch_logs.push_back(std::move(log));
    for (int s = 0; s < sched.steps_per_branch; ++s) {
      long long global_step = static_cast<long long>(t - 1) * sched.steps_per_branch + s + 1;
      art.train_loss.push_back({global_step, round.mean_losses[static_cast<std::size_t>(s)]});
    }
    art.checkpoints.push_back({round_label(t), current});
  }

  fill_common_snapshot(art, sched, tcfg);
  art.snapshot.model_config = base.config.canonical();
  for (const std::string& tid : sched.teacher_pool) {
    art.snapshot.corpus_digests[tid] = corpora.at(tid).content_digest();
  }
  return art;
}

RoundResult run_round(const lm::ParameterVector& current,
                      const std::map<std::string, corpus::DistillCorpus>& corpora,
                      const RoundSchedule& sched, const train::TrainConfig& tcfg, int t) {
  const int K = static_cast<int>(sched.teacher_pool.size());
  require(K > 0, Errc::config, "teacher pool is empty");
  require(t >= 1 && t <= sched.rounds, Errc::config, "round index out of range");

  RoundResult out;
  out.mean_losses.assign(static_cast<std::size_t>(sched.steps_per_branch), 0.0);
  std::vector<lm::ParameterVector> members;
  members.reserve(static_cast<std::size_t>(K));

  for (const std::string& tid : sched.teacher_pool) {
    train::TrainConfig bcfg = tcfg;
    bcfg.seed = derive_seed(tcfg.seed, "branch|" + tid, t);
    if (bcfg.schedule_scope == train::ScheduleScope::global) {
      bcfg.total_steps = static_cast<long long>(sched.rounds) * sched.steps_per_branch;
      bcfg.schedule_offset = static_cast<long long>(t - 1) * sched.steps_per_branch;
    }
    train::BranchResult res;
    try {
      res = train::train_branch(current, corpora.at(tid), sched.steps_per_branch, bcfg);
    } catch (const Error& e) {
      if (e.code() == Errc::divergence) {
        fail(Errc::divergence, "branch (round " + std::to_string(t) + ", teacher " + tid +
                                   ") diverged: " + e.what());
      }
      throw;
    }
    for (std::size_t i = 0; i < res.loss_log.size(); ++i) {
      out.mean_losses[i] += res.loss_log[i].loss / K;
    }
    out.branch_logs.push_back({t, tid, std::move(res.loss_log)});
    members.push_back(std::move(res.params));
  }
  out.merged = merge::merge_uniform(members);
  return out;
}

RunArtifacts run_std(const lm::ParameterVector& base, const corpus::DistillCorpus& corpus,
                     const RoundSchedule& sched, const train::TrainConfig& tcfg) {
  return run_continuous(Regime::STD, base, corpus, sched, tcfg);
}

RunArtifacts run_mtd(const lm::ParameterVector& base, const corpus::DistillCorpus& union_corpus,
                     const RoundSchedule& sched, const train::TrainConfig& tcfg) {
  return run_continuous(Regime::MTD, base, union_corpus, sched, tcfg);
}

std::map<std::string, RunArtifacts> run_pool_ablation(
    const lm::ParameterVector& base, const std::map<std::string, corpus::DistillCorpus>& corpora,
    const std::vector<std::vector<std::string>>& pool_variants, const RoundSchedule& sched,
    const train::TrainConfig& tcfg) {
  require(!pool_variants.empty(), Errc::config, "no pool variants given");

  std::map<std::string, RunArtifacts> out;
  for (const std::vector<std::string>& variant : pool_variants) {
    require(!variant.empty(), Errc::precondition, "empty pool variant");
    std::set<std::string> seen;
    std::string key;
    for (const std::string& tid : variant) {
      require(seen.insert(tid).second, Errc::config, "duplicate teacher in variant: " + tid);
      require(corpora.count(tid) > 0, Errc::precondition,
              "unknown teacher id in variant: " + tid);
      if (!key.empty()) key += "+";
      key += tid;
    }
    require(out.count(key) == 0, Errc::config, "duplicate pool variant: " + key);

    RoundSchedule variant_sched = sched;
    variant_sched.teacher_pool = variant;
    out.emplace(key, run_mot(base, corpora, variant_sched, tcfg));
  }
  return out;
}

RunArtifacts run_self_distill(const lm::ParameterVector& trained,
                              const corpus::ProblemSet& problems, const SamplingConfig& sampling,
                              const lm::ParameterVector& fresh_base, const RoundSchedule& sched,
                              const train::TrainConfig& tcfg,
                              corpus::DistillCorpus* corpus_out) {
  sampling.validate();
  sched.validate();
  tcfg.validate();
  require(trained.config.resolved_vocab() == fresh_base.config.resolved_vocab(),
          Errc::incompatible, "teacher and fresh student use different vocabularies");

  std::vector<const corpus::Problem*> train_problems =
      problems.of_split(corpus::Split::train);
  require(!train_problems.empty(), Errc::precondition, "no training problems to sample from");

  SelfDistillStats stats;
  std::vector<corpus::TeacherTrace> traces;
  traces.reserve(train_problems.size() * static_cast<std::size_t>(sampling.n_samples));
  for (const corpus::Problem* p : train_problems) {
    bool any_correct = false;
    for (int k = 0; k < sampling.n_samples; ++k) {
      std::uint64_t gen_seed = derive_seed(tcfg.seed, "self|" + p->id, k);
      corpus::TeacherTrace tr;
      tr.problem_id = p->id;
      tr.teacher_id = kSelfTeacherId;
      tr.rationale_text = lm::generate(trained, p->prompt_text, sampling.temperature,
                                       sampling.max_new_tokens, gen_seed);
      tr.extracted_answer = extract_answer(tr.rationale_text);
      tr.correct = tr.extracted_answer.has_value() &&
                   *tr.extracted_answer == p->reference_answer;
      any_correct = any_correct || tr.correct;
      ++stats.total_traces;
      if (tr.correct) ++stats.correct_traces;
      traces.push_back(std::move(tr));
    }
    if (any_correct) ++stats.prompts_covered;
  }

  corpus::DistillCorpus filtered = corpus::build_distill_corpus(
      traces, problems, derive_seed(tcfg.seed, "self-corpus"), /*answer_filter=*/true);

  // A sampled trace can run to the generation cap without finishing; keep
  // only traces a student can actually be trained on.
  corpus::DistillCorpus usable;
  usable.teacher_id = filtered.teacher_id;
  usable.source_counts = filtered.source_counts;
  for (corpus::DistillExample& ex : filtered.examples) {
    lm::TokenizedExample tok = lm::make_example(ex.prompt_text, ex.target_text);
    if (static_cast<int>(tok.tokens.size()) <= fresh_base.config.context_length) {
      usable.examples.push_back(std::move(ex));
    } else {
      ++stats.dropped_overlong;
    }
  }

  if (usable.examples.empty()) {
    std::ostringstream os;
    os << "self-distillation produced no usable training examples (traces: "
       << stats.total_traces << ", correct: " << stats.correct_traces
       << ", prompts covered: " << stats.prompts_covered << " of " << train_problems.size()
       << ", dropped overlong: " << stats.dropped_overlong << ")";
    fail(Errc::precondition, os.str());
  }
  if (corpus_out != nullptr) *corpus_out = usable;

  RunArtifacts art = run_continuous(Regime::SELF, fresh_base, usable, sched, tcfg);
  art.self_stats = stats;
  return art;
}

void attach_evals(RunArtifacts& artifacts, const corpus::ProblemSet& ps,
                  const eval::EvalConfig& ecfg, std::uint64_t seed,
                  const std::vector<corpus::Split>& splits, bool include_base) {
  require(!splits.empty(), Errc::config, "no eval splits requested");
  ecfg.validate();
  artifacts.snapshot.eval_config = ecfg.canonical();

  for (corpus::Split split : splits) {
    eval::EvalConfig split_cfg = ecfg;
    split_cfg.split = split;
    std::uint64_t split_seed = derive_seed(seed, "eval-split", static_cast<int>(split));
    std::vector<const corpus::Problem*> split_problems = ps.of_split(split);
    for (const Checkpoint& ck : artifacts.checkpoints) {
      if (!include_base && ck.label == "base") continue;
      artifacts.evals[ck.label][split] =
          eval::accuracy(ck.params, split_problems, split_cfg, split_seed);
    }
  }
}

std::pair<std::string, lm::ParameterVector> select_best(const RunArtifacts& artifacts,
                                                        corpus::Split eval_split) {
  const Checkpoint* best = nullptr;
  double best_score = 0.0;
  for (const Checkpoint& ck : artifacts.checkpoints) {
    if (ck.label == "base") continue;
    auto by_label = artifacts.evals.find(ck.label);
    require(by_label != artifacts.evals.end() &&
                by_label->second.count(eval_split) > 0,
            Errc::precondition, "missing evaluation for checkpoint " + ck.label);
    double score = by_label->second.at(eval_split).mean;
    if (best == nullptr || score > best_score) {
      best = &ck;
      best_score = score;
    }
  }
  require(best != nullptr, Errc::precondition, "no trained checkpoints to select from");
  return {best->label, best->params};
}

std::vector<std::pair<std::string, lm::ParameterVector>> checkpoint_pairs(
    const RunArtifacts& artifacts) {
  std::vector<std::pair<std::string, lm::ParameterVector>> out;
  out.reserve(artifacts.checkpoints.size());
  for (const Checkpoint& ck : artifacts.checkpoints) {
    out.emplace_back(ck.label, ck.params);
  }
  return out;
}

}  // namespace mot::orch
