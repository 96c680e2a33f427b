// Command-line surface: gen / teach / distill / probe / eval / report /
// selfdistill, each driven by a JSON config file plus flag overrides. Runs
// land under $MOT_RUN_ROOT (default ./runs), named by run id; failures exit
// nonzero with a one-line machine-readable error record on stderr.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mot/corpus.hpp"
#include "mot/error.hpp"
#include "mot/evalharness.hpp"
#include "mot/model.hpp"
#include "mot/orchestrator.hpp"
#include "mot/report.hpp"
#include "mot/rng.hpp"
#include "mot/store.hpp"
#include "mot/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  mot::require(in.good(), mot::Errc::io, "cannot open config " + path);
  std::ostringstream os;
  os << in.rdbuf();
  json j = json::parse(os.str(), nullptr, false);
  mot::require(!j.is_discarded(), mot::Errc::parse, "malformed JSON config: " + path);
  mot::require(j.is_object(), mot::Errc::parse, "config root must be an object: " + path);
  return j;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    mot::fail(mot::Errc::config, std::string("config field ") + key + ": " + e.what());
  }
}

mot::corpus::TaskConfig task_from_json(const json& root) {
  mot::corpus::TaskConfig cfg;
  const json j = root.value("task", json::object());
  cfg.n_operands_min = get_or(j, "n_operands_min", cfg.n_operands_min);
  cfg.n_operands_max = get_or(j, "n_operands_max", cfg.n_operands_max);
  cfg.operand_min = get_or(j, "operand_min", cfg.operand_min);
  cfg.operand_max = get_or(j, "operand_max", cfg.operand_max);
  cfg.modulus = get_or(j, "modulus", cfg.modulus);
  if (j.contains("operators")) {
    cfg.operators.clear();
    for (char c : get_or<std::string>(j, "operators", "")) {
      cfg.operators.push_back(mot::corpus::op_from_symbol(std::string(1, c)));
    }
  }
  if (j.contains("family")) {
    const std::string fam = get_or<std::string>(j, "family", "primary");
    if (fam == "primary") {
      cfg.family = mot::corpus::Family::primary;
    } else if (fam == "retention") {
      cfg.family = mot::corpus::Family::retention;
    } else {
      mot::fail(mot::Errc::config, "unknown task family: " + fam);
    }
  }
  cfg.validate();
  return cfg;
}

mot::corpus::SplitCounts counts_from_json(const json& root) {
  mot::corpus::SplitCounts counts{200, 32, 32, 0};
  const json j = root.value("counts", json::object());
  counts.train = get_or(j, "train", counts.train);
  counts.validation = get_or(j, "validation", counts.validation);
  counts.test = get_or(j, "test", counts.test);
  counts.retention = get_or(j, "retention", counts.retention);
  return counts;
}

std::vector<mot::corpus::TeacherSpec> teachers_from_json(const json& root) {
  std::vector<mot::corpus::TeacherSpec> specs;
  for (const json& j : root.value("teachers", json::array())) {
    mot::corpus::TeacherSpec spec;
    spec.teacher_id = get_or<std::string>(j, "teacher_id", "");
    spec.style = mot::corpus::style_from_name(get_or<std::string>(j, "style", "terse"));
    spec.step_error_rate = get_or(j, "step_error_rate", spec.step_error_rate);
    spec.lexical_shift = get_or(j, "lexical_shift", spec.lexical_shift);
    spec.samples_per_prompt = get_or(j, "samples_per_prompt", spec.samples_per_prompt);
    spec.validate();
    specs.push_back(std::move(spec));
  }
  return specs;
}

mot::lm::ModelConfig model_from_json(const json& root) {
  mot::lm::ModelConfig cfg;
  const json j = root.value("model", json::object());
  cfg.d_model = get_or(j, "d_model", cfg.d_model);
  cfg.n_layers = get_or(j, "n_layers", cfg.n_layers);
  cfg.n_heads = get_or(j, "n_heads", cfg.n_heads);
  cfg.context_length = get_or(j, "context_length", cfg.context_length);
  cfg.vocab_size = get_or(j, "vocab_size", cfg.vocab_size);
  cfg.tied_head = get_or(j, "tied_head", cfg.tied_head);
  cfg.validate();
  return cfg;
}

mot::train::TrainConfig train_from_json(const json& root) {
  mot::train::TrainConfig cfg;
  const json j = root.value("train", json::object());
  cfg.base_lr = get_or(j, "base_lr", cfg.base_lr);
  cfg.beta1 = get_or(j, "beta1", cfg.beta1);
  cfg.beta2 = get_or(j, "beta2", cfg.beta2);
  cfg.weight_decay = get_or(j, "weight_decay", cfg.weight_decay);
  cfg.warmup_fraction = get_or(j, "warmup_fraction", cfg.warmup_fraction);
  cfg.grad_clip_norm = get_or(j, "grad_clip_norm", cfg.grad_clip_norm);
  cfg.adam_eps = get_or(j, "adam_eps", cfg.adam_eps);
  cfg.batch_size = get_or(j, "batch_size", cfg.batch_size);
  cfg.total_steps = get_or(j, "total_steps", cfg.total_steps);
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
  if (j.contains("schedule_scope")) {
    const std::string scope = get_or<std::string>(j, "schedule_scope", "per_branch");
    if (scope == "per_branch") {
      cfg.schedule_scope = mot::train::ScheduleScope::per_branch;
    } else if (scope == "global") {
      cfg.schedule_scope = mot::train::ScheduleScope::global;
    } else {
      mot::fail(mot::Errc::config, "unknown schedule scope: " + scope);
    }
  }
  cfg.validate();
  return cfg;
}

mot::orch::RoundSchedule schedule_from_json(const json& root) {
  mot::orch::RoundSchedule sched;
  const json j = root.value("schedule", json::object());
  sched.rounds = get_or(j, "rounds", sched.rounds);
  sched.steps_per_branch = get_or(j, "steps_per_branch", sched.steps_per_branch);
  sched.baseline_total_steps = get_or(j, "baseline_total_steps", sched.baseline_total_steps);
  sched.checkpoint_every = get_or(j, "checkpoint_every", sched.checkpoint_every);
  sched.teacher_pool = get_or(j, "teacher_pool", sched.teacher_pool);
  sched.validate();
  return sched;
}

mot::eval::EvalConfig eval_from_json(const json& root) {
  mot::eval::EvalConfig cfg;
  const json j = root.value("eval", json::object());
  cfg.n_runs = get_or(j, "n_runs", cfg.n_runs);
  cfg.temperature = get_or(j, "temperature", cfg.temperature);
  cfg.max_new_tokens = get_or(j, "max_new_tokens", cfg.max_new_tokens);
  cfg.validate();
  return cfg;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  mot::require(out.good(), mot::Errc::io, "cannot write " + path);
  out << content;
  mot::require(out.good(), mot::Errc::io, "write failed for " + path);
}

std::string pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", 100.0 * fraction);
  return buf;
}

// ---------------------------------------------------------------------------
// gen

struct GenOpts {
  std::string config;
  std::string out = "problems.jsonl";
  std::uint64_t seed = 1;
  int train = -1, validation = -1, test = -1, retention = -1;
};

void cmd_gen(const GenOpts& o) {
  const json cfg = load_config_file(o.config);
  mot::corpus::TaskConfig task = task_from_json(cfg);
  mot::corpus::SplitCounts counts = counts_from_json(cfg);
  if (o.train >= 0) counts.train = o.train;
  if (o.validation >= 0) counts.validation = o.validation;
  if (o.test >= 0) counts.test = o.test;
  if (o.retention >= 0) counts.retention = o.retention;

  mot::corpus::ProblemSet ps = mot::corpus::gen_problems(task, counts, o.seed);
  mot::corpus::export_problems_jsonl(ps, o.out);
  std::cout << "wrote " << ps.problems.size() << " problems to " << o.out << " (train "
            << counts.train << ", validation " << counts.validation << ", test " << counts.test
            << ", retention " << counts.retention << ")\n";
}

// ---------------------------------------------------------------------------
// teach

struct TeachOpts {
  std::string config;
  std::string problems;
  std::string out_dir = "corpora";
  std::uint64_t seed = 7;
  std::vector<std::string> only;  // teacher ids; empty = all configured
  std::string split = "train";
  bool no_filter = false;
};

void cmd_teach(const TeachOpts& o) {
  const json cfg = load_config_file(o.config);
  mot::require(cfg.contains("task"), mot::Errc::config,
               "teach needs the config's task section (for the modulus)");
  mot::corpus::TaskConfig task = task_from_json(cfg);
  std::vector<mot::corpus::TeacherSpec> specs = teachers_from_json(cfg);
  mot::require(!specs.empty(), mot::Errc::config, "no teachers configured");
  if (!o.only.empty()) {
    std::vector<mot::corpus::TeacherSpec> picked;
    for (const std::string& id : o.only) {
      bool found = false;
      for (const mot::corpus::TeacherSpec& spec : specs) {
        if (spec.teacher_id == id) {
          picked.push_back(spec);
          found = true;
          break;
        }
      }
      mot::require(found, mot::Errc::config, "no configured teacher named " + id);
    }
    specs = std::move(picked);
  }

  mot::corpus::ProblemSet ps = mot::corpus::import_problems_jsonl(o.problems);
  const mot::corpus::Split split = mot::corpus::split_from_name(o.split);
  std::vector<const mot::corpus::Problem*> prompts = ps.of_split(split);
  mot::require(!prompts.empty(), mot::Errc::precondition,
               "no problems in split " + o.split);

  std::error_code ec;
  fs::create_directories(o.out_dir, ec);
  mot::require(!ec, mot::Errc::io, "cannot create " + o.out_dir + ": " + ec.message());

  for (const mot::corpus::TeacherSpec& spec : specs) {
    std::vector<mot::corpus::TeacherTrace> traces;
    traces.reserve(prompts.size() * static_cast<std::size_t>(spec.samples_per_prompt));
    long long correct = 0;
    for (const mot::corpus::Problem* p : prompts) {
      for (mot::corpus::TeacherTrace& tr :
           mot::corpus::teacher_generate(spec, *p, o.seed, task.modulus)) {
        if (tr.correct) ++correct;
        traces.push_back(std::move(tr));
      }
    }
    mot::corpus::DistillCorpus corpus = mot::corpus::build_distill_corpus(
        traces, ps, mot::derive_seed(o.seed, "corpus|" + spec.teacher_id), !o.no_filter);
    const std::string path = (fs::path(o.out_dir) / (spec.teacher_id + ".jsonl")).string();
    mot::corpus::export_jsonl(corpus, path);
    std::cout << spec.teacher_id << ": " << corpus.size() << "/" << prompts.size()
              << " prompts kept, " << correct << "/" << traces.size()
              << " traces correct, digest " << mot::store::hex64(corpus.content_digest())
              << " -> " << path << "\n";
  }
}

// ---------------------------------------------------------------------------
// distill

struct DistillOpts {
  std::string regime;
  std::string config;
  std::string problems;
  std::vector<std::string> corpora;
  std::string base_ckpt;
  std::uint64_t model_seed = 1000;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int rounds = 0;
  int steps_per_branch = 0;
  long long total_steps = 0;
  long long checkpoint_every = 0;
  std::string select_on = "validation";
  std::string run_id;
  bool resume = false;
  bool dynamics = false;
  int eval_runs = 0;
  std::uint64_t eval_seed = 0;
  bool eval_seed_set = false;
};

mot::corpus::Split parse_select_split(const std::string& name) {
  mot::corpus::Split split = mot::corpus::split_from_name(name);
  mot::require(split == mot::corpus::Split::validation || split == mot::corpus::Split::test,
               mot::Errc::config, "--select-on must be validation or test");
  return split;
}

void print_run_summary(const mot::orch::RunArtifacts& art, const std::string& run_id,
                       const std::string& best_label, mot::corpus::Split select_split) {
  std::cout << "run " << run_id << " (" << mot::orch::regime_name(art.regime) << "): "
            << art.checkpoints.size() - 1 << " checkpoints plus base, " << art.branch_steps
            << " optimizer steps\n";
  const auto& best = art.evals.at(best_label);
  std::cout << "best on " << mot::corpus::split_name(select_split) << ": " << best_label;
  for (const auto& [split, result] : best) {
    std::cout << "  " << mot::corpus::split_name(split) << " " << pct(result.mean);
  }
  std::cout << "\n";
  if (art.fairness_warning) {
    std::cout << "warning: baseline steps differ from rounds x steps-per-branch; regime "
                 "comparisons are off the fair budget\n";
  }
  std::cout << "run directory: " << mot::store::run_dir(run_id) << "\n";
}

void cmd_distill(const DistillOpts& o) {
  const json cfg = load_config_file(o.config);
  const mot::orch::Regime regime = mot::orch::regime_from_name(o.regime);
  const mot::corpus::Split select_split = parse_select_split(o.select_on);

  mot::corpus::ProblemSet ps = mot::corpus::import_problems_jsonl(o.problems);
  mot::require(!o.corpora.empty(), mot::Errc::config, "at least one --corpus is required");
  std::vector<mot::corpus::DistillCorpus> loaded;
  std::map<std::string, mot::corpus::DistillCorpus> by_id;
  for (const std::string& path : o.corpora) {
    mot::corpus::DistillCorpus c = mot::corpus::import_jsonl(path);
    mot::require(by_id.count(c.teacher_id) == 0, mot::Errc::config,
                 "duplicate corpus for teacher " + c.teacher_id);
    by_id[c.teacher_id] = c;
    loaded.push_back(std::move(c));
  }

  mot::train::TrainConfig tcfg = train_from_json(cfg);
  if (o.seed_set) tcfg.seed = o.seed;
  mot::orch::RoundSchedule sched = schedule_from_json(cfg);
  if (o.rounds > 0) sched.rounds = o.rounds;
  if (o.steps_per_branch > 0) sched.steps_per_branch = o.steps_per_branch;
  if (o.total_steps > 0) sched.baseline_total_steps = o.total_steps;
  if (o.checkpoint_every > 0) sched.checkpoint_every = o.checkpoint_every;
  sched.validate();

  mot::lm::ParameterVector base;
  if (!o.base_ckpt.empty()) {
    base = mot::store::load_checkpoint(o.base_ckpt);
    if (cfg.contains("model")) {
      mot::require(model_from_json(cfg).canonical() == base.config.canonical(),
                   mot::Errc::config,
                   "the config's model section conflicts with the --base checkpoint");
    }
  } else {
    base = mot::lm::init_params(model_from_json(cfg), o.model_seed);
  }

  // Resolve the run id before running so resume can find the directory.
  mot::orch::ConfigSnapshot snap;
  snap.model_config = base.config.canonical();
  snap.train_config = tcfg.canonical();
  snap.init_digest = mot::store::params_digest(base);
  mot::corpus::DistillCorpus mtd_union;
  if (regime == mot::orch::Regime::MOT) {
    if (sched.teacher_pool.empty()) {
      for (const auto& [id, c] : by_id) sched.teacher_pool.push_back(id);
    }
    for (const std::string& tid : sched.teacher_pool) {
      mot::require(by_id.count(tid) > 0, mot::Errc::precondition,
                   "no corpus for pool teacher " + tid);
      snap.corpus_digests[tid] = by_id.at(tid).content_digest();
    }
  } else if (regime == mot::orch::Regime::MTD) {
    mtd_union = mot::corpus::union_corpora(loaded);
    snap.corpus_digests[mtd_union.teacher_id] = mtd_union.content_digest();
  } else if (regime == mot::orch::Regime::STD) {
    mot::require(loaded.size() == 1, mot::Errc::config,
                 "std distillation takes exactly one corpus");
    snap.corpus_digests[loaded[0].teacher_id] = loaded[0].content_digest();
  } else {
    mot::fail(mot::Errc::config, "use the selfdistill command for the self regime");
  }
  snap.schedule = sched.canonical();
  const std::string run_id =
      o.run_id.empty() ? mot::store::make_run_id(o.regime, tcfg.seed, snap) : o.run_id;

  mot::orch::RunArtifacts art;
  if (regime == mot::orch::Regime::MOT) {
    art = mot::store::run_mot_persisted(base, by_id, sched, tcfg, run_id, o.resume);
  } else if (regime == mot::orch::Regime::MTD) {
    art = mot::store::run_continuous_persisted(regime, base, mtd_union, sched, tcfg, run_id,
                                               o.resume);
  } else {
    art = mot::store::run_continuous_persisted(regime, base, loaded[0], sched, tcfg, run_id,
                                               o.resume);
  }
  if (cfg.contains("task")) art.snapshot.task_config = task_from_json(cfg).canonical();
  for (const mot::corpus::TeacherSpec& spec : teachers_from_json(cfg)) {
    art.snapshot.teacher_specs.push_back(spec.canonical());
  }

  mot::eval::EvalConfig ecfg = eval_from_json(cfg);
  if (o.eval_runs > 0) ecfg.n_runs = o.eval_runs;
  const std::uint64_t eval_seed =
      o.eval_seed_set ? o.eval_seed : mot::derive_seed(tcfg.seed, "eval");
  mot::orch::attach_evals(art, ps, ecfg, eval_seed,
                          {mot::corpus::Split::validation, mot::corpus::Split::test});
  auto [best_label, best_params] = mot::orch::select_best(art, select_split);
  (void)best_params;
  mot::store::finalize_run(art, run_id);

  if (o.dynamics) {
    mot::corpus::DistillCorpus probe_corpus;
    if (regime == mot::orch::Regime::MOT) {
      std::vector<mot::corpus::DistillCorpus> pool;
      for (const std::string& tid : sched.teacher_pool) pool.push_back(by_id.at(tid));
      probe_corpus = pool.size() == 1 ? pool[0] : mot::corpus::union_corpora(pool);
    } else if (regime == mot::orch::Regime::MTD) {
      probe_corpus = mtd_union;
    } else {
      probe_corpus = loaded[0];
    }
    mot::eval::EvalConfig dyn_cfg = ecfg;
    dyn_cfg.split = mot::corpus::Split::validation;
    mot::eval::DynamicsResult dyn = mot::eval::dynamics_curves(
        mot::orch::checkpoint_pairs(art), art.train_loss, probe_corpus,
        ps.of_split(mot::corpus::Split::validation), dyn_cfg,
        mot::derive_seed(eval_seed, "dynamics"));
    const std::string dir = mot::store::run_dir(run_id);
    write_text((fs::path(dir) / "dynamics_loss.csv").string(),
               mot::eval::dynamics_loss_csv(dyn));
    write_text((fs::path(dir) / "dynamics_checkpoints.csv").string(),
               mot::eval::dynamics_checkpoint_csv(dyn));
  }

  print_run_summary(art, run_id, best_label, select_split);
}

// ---------------------------------------------------------------------------
// probe

struct ProbeOpts {
  std::string base_ckpt;
  std::string ckpt;
  int grid = 11;
  std::string problems;
  std::string split = "validation";
  int runs = 8;
  double temperature = 0.6;
  int max_new_tokens = 224;
  std::uint64_t seed = 5;
  std::string out;
  std::string run_id;
};

void cmd_probe(const ProbeOpts& o) {
  mot::lm::ParameterVector base = mot::store::load_checkpoint(o.base_ckpt);
  mot::lm::ParameterVector ckpt = mot::store::load_checkpoint(o.ckpt, base.config_hash);
  mot::corpus::ProblemSet ps = mot::corpus::import_problems_jsonl(o.problems);

  mot::eval::EvalConfig ecfg;
  ecfg.n_runs = o.runs;
  ecfg.temperature = o.temperature;
  ecfg.max_new_tokens = o.max_new_tokens;
  ecfg.split = mot::corpus::split_from_name(o.split);

  std::vector<double> grid = mot::eval::default_lambda_grid(o.grid);
  mot::eval::ProbeResult res =
      mot::eval::probe_curve(base, ckpt, grid, ps.of_split(ecfg.split), ecfg, o.seed);

  const std::string csv = mot::eval::probe_to_csv(res);
  if (o.out.empty()) {
    std::cout << csv;
  } else {
    write_text(o.out, csv);
    std::cout << "wrote " << o.out << "\n";
  }
  std::cout << "curvature " << res.curvature << ", max drop " << res.max_drop << "\n";

  if (!o.run_id.empty()) {
    std::vector<mot::store::MetricRecord> records;
    for (std::size_t i = 0; i < res.lambda_grid.size(); ++i) {
      mot::store::MetricRecord rec;
      rec.run_id = o.run_id;
      rec.stream = "probe";
      std::ostringstream label;
      label << res.lambda_grid[i];
      rec.label = label.str();
      rec.payload = {{"lambda", res.lambda_grid[i]}, {"score", res.scores[i]}};
      records.push_back(std::move(rec));
    }
    const std::string dir = mot::store::run_dir(o.run_id);
    mot::store::append_metrics(records, (fs::path(dir) / "metrics.jsonl").string());
  }
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string ckpt;
  std::string problems;
  int runs = 16;
  double temperature = 0.6;
  int max_new_tokens = 224;
  std::uint64_t seed = 9;
  std::string retention_base;  // enables the retention delta when given
};

void cmd_eval(const EvalOpts& o) {
  mot::lm::ParameterVector params = mot::store::load_checkpoint(o.ckpt);
  mot::corpus::ProblemSet ps = mot::corpus::import_problems_jsonl(o.problems);

  mot::eval::EvalConfig ecfg;
  ecfg.n_runs = o.runs;
  ecfg.temperature = o.temperature;
  ecfg.max_new_tokens = o.max_new_tokens;

  mot::eval::EvalReport rep = mot::eval::make_report(params, ps, ecfg, o.seed);
  json out;
  out["validation"] = {{"mean", rep.validation.mean}, {"stderr", rep.validation.stderr_}};
  out["test"] = {{"mean", rep.test.mean}, {"stderr", rep.test.stderr_}};
  out["avg"] = rep.avg;

  if (!o.retention_base.empty()) {
    mot::lm::ParameterVector base =
        mot::store::load_checkpoint(o.retention_base, params.config_hash);
    std::vector<const mot::corpus::Problem*> retention =
        ps.of_split(mot::corpus::Split::retention);
    mot::require(!retention.empty(), mot::Errc::precondition,
                 "problem set has no retention split");
    mot::eval::RetentionResult ret = mot::eval::retention_eval(
        params, base, retention, ecfg, mot::derive_seed(o.seed, "retention"));
    out["retention_delta"] = ret.delta;
    out["retention"] = {{"tuned", ret.tuned.mean}, {"base", ret.base.mean}};
  }
  std::cout << out.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// report

struct ReportOpts {
  std::vector<std::string> run_dirs;
  std::string select_on = "validation";
};

void cmd_report(const ReportOpts& o) {
  const mot::corpus::Split split = parse_select_split(o.select_on);
  std::vector<mot::report::RegimeRow> rows;
  for (const std::string& dir : o.run_dirs) {
    rows.push_back(mot::report::row_from_run_dir(dir, split));
  }
  std::cout << mot::report::comparison_table(rows);
}

// ---------------------------------------------------------------------------
// selfdistill

struct SelfOpts {
  std::string config;
  std::string teacher_ckpt;
  std::string fresh_ckpt;
  std::uint64_t fresh_seed = 77;
  std::string problems;
  int n_samples = 16;
  double temperature = 0.6;
  int max_new_tokens = 224;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string run_id;
  std::string out_corpus;
};

void cmd_selfdistill(const SelfOpts& o) {
  const json cfg = load_config_file(o.config);
  mot::corpus::ProblemSet ps = mot::corpus::import_problems_jsonl(o.problems);
  mot::lm::ParameterVector trained = mot::store::load_checkpoint(o.teacher_ckpt);
  mot::lm::ParameterVector fresh_base =
      o.fresh_ckpt.empty() ? mot::lm::init_params(trained.config, o.fresh_seed)
                           : mot::store::load_checkpoint(o.fresh_ckpt, trained.config_hash);

  mot::train::TrainConfig tcfg = train_from_json(cfg);
  if (o.seed_set) tcfg.seed = o.seed;
  mot::orch::RoundSchedule sched = schedule_from_json(cfg);
  mot::orch::SamplingConfig sampling;
  sampling.n_samples = o.n_samples;
  sampling.temperature = o.temperature;
  sampling.max_new_tokens = o.max_new_tokens;

  mot::corpus::DistillCorpus filtered;
  mot::orch::RunArtifacts art =
      mot::orch::run_self_distill(trained, ps, sampling, fresh_base, sched, tcfg, &filtered);
  if (cfg.contains("task")) art.snapshot.task_config = task_from_json(cfg).canonical();
  art.snapshot.init_digest = mot::store::params_digest(fresh_base);

  mot::eval::EvalConfig ecfg = eval_from_json(cfg);
  const std::uint64_t eval_seed = mot::derive_seed(tcfg.seed, "eval");
  mot::orch::attach_evals(art, ps, ecfg, eval_seed,
                          {mot::corpus::Split::validation, mot::corpus::Split::test});
  auto [best_label, best_params] = mot::orch::select_best(art, mot::corpus::Split::validation);
  (void)best_params;

  const std::string run_id = o.run_id.empty() ? mot::store::make_run_id(art) : o.run_id;
  mot::store::save_run(art, run_id);
  const std::string dir = mot::store::run_dir(run_id);
  const std::string corpus_path =
      o.out_corpus.empty() ? (fs::path(dir) / "corpora" / "SELF.jsonl").string() : o.out_corpus;
  std::error_code ec;
  fs::create_directories(fs::path(corpus_path).parent_path(), ec);
  mot::corpus::export_jsonl(filtered, corpus_path);

  std::cout << "teacher traces: " << art.self_stats.correct_traces << "/"
            << art.self_stats.total_traces << " correct, " << art.self_stats.prompts_covered
            << " prompts covered, corpus size " << filtered.size() << " -> " << corpus_path
            << "\n";
  const double base_val =
      art.evals.at("base").at(mot::corpus::Split::validation).mean;
  const double best_val = art.evals.at(best_label).at(mot::corpus::Split::validation).mean;
  std::cout << "re-distilled student: " << best_label << " validation " << pct(best_val)
            << " vs fresh base " << pct(base_val) << "\n";
  print_run_summary(art, run_id, best_label, mot::corpus::Split::validation);
}

void emit_error_record(const std::string& kind, int exit_code, const std::string& message) {
  json record = {{"error", kind}, {"exit_code", exit_code}, {"message", message}};
  std::cerr << record.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"merge-of-thought distillation laboratory"};
  app.set_version_flag("--version", mot::store::kToolVersion);
  app.require_subcommand(1);

  GenOpts gen_opts;
  CLI::App* gen = app.add_subcommand("gen", "generate a deterministic problem set");
  gen->add_option("--config", gen_opts.config, "JSON config with task/counts sections");
  gen->add_option("--out", gen_opts.out, "output problems JSONL path");
  gen->add_option("--seed", gen_opts.seed, "generation seed");
  gen->add_option("--train", gen_opts.train, "train split size");
  gen->add_option("--validation", gen_opts.validation, "validation split size");
  gen->add_option("--test", gen_opts.test, "test split size");
  gen->add_option("--retention", gen_opts.retention, "retention split size");
  gen->callback([&]() { cmd_gen(gen_opts); });

  TeachOpts teach_opts;
  CLI::App* teach = app.add_subcommand("teach", "produce per-teacher distillation corpora");
  teach->add_option("--config", teach_opts.config, "JSON config with task/teachers sections")
      ->required();
  teach->add_option("--problems", teach_opts.problems, "problems JSONL path")->required();
  teach->add_option("--out-dir", teach_opts.out_dir, "corpus output directory");
  teach->add_option("--seed", teach_opts.seed, "teacher sampling seed");
  teach->add_option("--teacher", teach_opts.only, "restrict to these teacher ids");
  teach->add_option("--split", teach_opts.split, "problem split to teach on");
  teach->add_flag("--no-filter", teach_opts.no_filter,
                  "keep answer filtering off (diagnostic)");
  teach->callback([&]() { cmd_teach(teach_opts); });

  DistillOpts distill_opts;
  CLI::App* distill = app.add_subcommand("distill", "train a student under one regime");
  distill->add_option("--regime", distill_opts.regime, "std, mtd, or mot")->required();
  distill->add_option("--config", distill_opts.config, "JSON config");
  distill->add_option("--problems", distill_opts.problems, "problems JSONL path")->required();
  distill->add_option("--corpus", distill_opts.corpora, "distillation corpus JSONL (repeat)")
      ->required();
  distill->add_option("--base", distill_opts.base_ckpt, "base checkpoint (.motc)");
  distill->add_option("--model-seed", distill_opts.model_seed,
                      "fresh-init seed when --base is absent");
  CLI::Option* seed_opt = distill->add_option("--seed", distill_opts.seed, "training seed");
  distill->add_option("--rounds", distill_opts.rounds, "merge rounds (mot)");
  distill->add_option("--steps-per-branch", distill_opts.steps_per_branch,
                      "steps per branch per round (mot)");
  distill->add_option("--total-steps", distill_opts.total_steps, "baseline steps (std/mtd)");
  distill->add_option("--checkpoint-every", distill_opts.checkpoint_every,
                      "baseline checkpoint cadence");
  distill->add_option("--select-on", distill_opts.select_on,
                      "checkpoint-selection split (validation|test)");
  distill->add_option("--run-id", distill_opts.run_id, "run id (default: derived)");
  distill->add_flag("--resume", distill_opts.resume, "continue from the last valid checkpoint");
  distill->add_flag("--dynamics", distill_opts.dynamics, "emit training-dynamics CSVs");
  distill->add_option("--eval-runs", distill_opts.eval_runs, "accuracy runs per checkpoint");
  CLI::Option* eval_seed_opt =
      distill->add_option("--eval-seed", distill_opts.eval_seed, "evaluation seed");
  distill->callback([&, seed_opt, eval_seed_opt]() {
    distill_opts.seed_set = seed_opt->count() > 0;
    distill_opts.eval_seed_set = eval_seed_opt->count() > 0;
    cmd_distill(distill_opts);
  });

  ProbeOpts probe_opts;
  CLI::App* probe = app.add_subcommand("probe", "reverse-merge interpolation probe");
  probe->add_option("--base", probe_opts.base_ckpt, "base checkpoint (.motc)")->required();
  probe->add_option("--ckpt", probe_opts.ckpt, "trained checkpoint (.motc)")->required();
  probe->add_option("--grid", probe_opts.grid, "number of interpolation points");
  probe->add_option("--problems", probe_opts.problems, "problems JSONL path")->required();
  probe->add_option("--split", probe_opts.split, "split to score");
  probe->add_option("--runs", probe_opts.runs, "accuracy runs per point");
  probe->add_option("--temperature", probe_opts.temperature, "sampling temperature");
  probe->add_option("--max-new", probe_opts.max_new_tokens, "generation budget");
  probe->add_option("--seed", probe_opts.seed, "evaluation seed");
  probe->add_option("--out", probe_opts.out, "CSV output path (default stdout)");
  probe->add_option("--run-id", probe_opts.run_id, "append probe metrics to this run");
  probe->callback([&]() { cmd_probe(probe_opts); });

  EvalOpts eval_opts;
  CLI::App* evalc = app.add_subcommand("eval", "score a checkpoint on the held-out splits");
  evalc->add_option("--ckpt", eval_opts.ckpt, "checkpoint (.motc)")->required();
  evalc->add_option("--problems", eval_opts.problems, "problems JSONL path")->required();
  evalc->add_option("--runs", eval_opts.runs, "accuracy runs");
  evalc->add_option("--temperature", eval_opts.temperature, "sampling temperature");
  evalc->add_option("--max-new", eval_opts.max_new_tokens, "generation budget");
  evalc->add_option("--seed", eval_opts.seed, "evaluation seed");
  evalc->add_option("--retention-base", eval_opts.retention_base,
                    "base checkpoint for the retention delta");
  evalc->callback([&]() { cmd_eval(eval_opts); });

  ReportOpts report_opts;
  CLI::App* report = app.add_subcommand("report", "cross-regime comparison table");
  report->add_option("run-dirs", report_opts.run_dirs, "finished run directories")->required();
  report->add_option("--select-on", report_opts.select_on,
                     "checkpoint-selection split (validation|test)");
  report->callback([&]() { cmd_report(report_opts); });

  SelfOpts self_opts;
  CLI::App* self = app.add_subcommand("selfdistill", "student-as-teacher re-distillation");
  self->add_option("--config", self_opts.config, "JSON config");
  self->add_option("--teacher", self_opts.teacher_ckpt, "trained student checkpoint (.motc)")
      ->required();
  self->add_option("--fresh", self_opts.fresh_ckpt, "fresh student checkpoint (.motc)");
  self->add_option("--fresh-seed", self_opts.fresh_seed,
                   "fresh-init seed when --fresh is absent");
  self->add_option("--problems", self_opts.problems, "problems JSONL path")->required();
  self->add_option("--n-samples", self_opts.n_samples, "traces sampled per prompt");
  self->add_option("--temperature", self_opts.temperature, "teacher sampling temperature");
  self->add_option("--max-new", self_opts.max_new_tokens, "generation budget");
  CLI::Option* self_seed_opt = self->add_option("--seed", self_opts.seed, "training seed");
  self->add_option("--run-id", self_opts.run_id, "run id (default: derived)");
  self->add_option("--out-corpus", self_opts.out_corpus, "filtered corpus output path");
  self->callback([&, self_seed_opt]() {
    self_opts.seed_set = self_seed_opt->count() > 0;
    cmd_selfdistill(self_opts);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    emit_error_record("usage", e.get_exit_code(), e.what());
    return e.get_exit_code();
  } catch (const mot::Error& e) {
    emit_error_record(mot::errc_name(e.code()), e.exit_code(), e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    emit_error_record("internal", 1, e.what());
    return 1;
  }
  return 0;
}
