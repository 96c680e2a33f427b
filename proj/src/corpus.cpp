#include "mot/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "mot/answer.hpp"
#include "mot/rng.hpp"

namespace mot::corpus {

using nlohmann::json;

char op_symbol(Op op) {
  switch (op) {
    case Op::add: return '+';
    case Op::sub: return '-';
    case Op::mul: return '*';
  }
  return '?';
}

Op op_from_symbol(const std::string& s) {
  if (s == "+") return Op::add;
  if (s == "-") return Op::sub;
  if (s == "*") return Op::mul;
  fail(Errc::parse, "unknown operator token: " + s);
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
    case Split::retention: return "retention";
  }
  return "?";
}

Split split_from_name(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  if (s == "retention") return Split::retention;
  fail(Errc::parse, "unknown split name: " + s);
}

const char* style_name(Style s) {
  switch (s) {
    case Style::verbose: return "verbose";
    case Style::named: return "named-intermediates";
    case Style::terse: return "terse";
    case Style::shifted: return "shifted";
  }
  return "?";
}

Style style_from_name(const std::string& s) {
  if (s == "verbose") return Style::verbose;
  if (s == "named-intermediates" || s == "named") return Style::named;
  if (s == "terse") return Style::terse;
  if (s == "shifted") return Style::shifted;
  fail(Errc::parse, "unknown style name: " + s);
}

void TaskConfig::validate() const {
  require(modulus >= 2, Errc::config, "modulus must be >= 2");
  require(!operators.empty(), Errc::config, "operator set must be nonempty");
  require(n_operands_min >= 2, Errc::config, "n_operands lower bound must be >= 2");
  require(n_operands_max >= n_operands_min, Errc::config, "n_operands range is empty");
  require(operand_max >= operand_min, Errc::config, "operand range is empty");
  require(operand_min >= 0, Errc::config, "operands must be nonnegative");
}

std::string TaskConfig::canonical() const {
  std::ostringstream os;
  os << "task{n_operands=" << n_operands_min << ".." << n_operands_max
     << ";operands=" << operand_min << ".." << operand_max << ";ops=";
  for (Op op : operators) os << op_symbol(op);
  os << ";mod=" << modulus
     << ";family=" << (family == Family::primary ? "primary" : "retention") << "}";
  return os.str();
}

const Problem* ProblemSet::find(const std::string& id) const {
  for (const Problem& p : problems) {
    if (p.id == id) return &p;
  }
  return nullptr;
}

std::vector<const Problem*> ProblemSet::of_split(Split s) const {
  std::vector<const Problem*> out;
  for (const Problem& p : problems) {
    if (p.split == s) out.push_back(&p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Expressions

static long long positive_mod(long long v, long long m) {
  long long r = v % m;
  return r < 0 ? r + m : r;
}

static long long apply_op(long long a, Op op, long long b, long long m) {
  switch (op) {
    case Op::add: return positive_mod(a + b, m);
    case Op::sub: return positive_mod(a - b, m);
    case Op::mul: return positive_mod(a * b, m);
  }
  return 0;
}

std::string Expression::render_prompt() const {
  std::string out = successor ? "next" : "";
  for (std::size_t i = 0; i < operands.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += std::to_string(operands[i]);
    if (i < ops.size()) {
      out += ' ';
      out += op_symbol(ops[i]);
    }
  }
  return out;
}

static std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

static long long parse_integer_token(const std::string& t) {
  require(!t.empty(), Errc::parse, "empty operand token");
  for (char c : t) {
    require(c >= '0' && c <= '9', Errc::parse, "malformed operand token: " + t);
  }
  require(t.size() <= 18, Errc::parse, "operand token too long: " + t);
  return std::stoll(t);
}

Expression parse_prompt(const std::string& prompt_text) {
  std::vector<std::string> tokens = split_tokens(prompt_text);
  require(!tokens.empty(), Errc::parse, "empty prompt");
  Expression e;
  if (tokens.front() == "next") {
    e.successor = true;
    tokens.erase(tokens.begin());
  }
  require(tokens.size() >= 3 && tokens.size() % 2 == 1, Errc::parse,
          "prompt is not an alternating operand/operator sequence: " + prompt_text);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i % 2 == 0) {
      e.operands.push_back(parse_integer_token(tokens[i]));
    } else {
      e.ops.push_back(op_from_symbol(tokens[i]));
    }
  }
  return e;
}

std::vector<WorkStep> work_steps(const Expression& e, long long modulus) {
  require(e.operands.size() == e.ops.size() + 1, Errc::precondition, "malformed expression");
  std::vector<WorkStep> steps;
  steps.reserve(e.ops.size());
  long long acc = positive_mod(e.operands[0], modulus);
  for (std::size_t i = 0; i < e.ops.size(); ++i) {
    WorkStep st;
    st.lhs = acc;
    st.op = e.ops[i];
    st.rhs = e.operands[i + 1];
    st.result = apply_op(acc, st.op, st.rhs, modulus);
    acc = st.result;
    steps.push_back(st);
  }
  return steps;
}

long long evaluate(const Expression& e, long long modulus) {
  std::vector<WorkStep> steps = work_steps(e, modulus);
  long long chain = steps.empty() ? positive_mod(e.operands[0], modulus) : steps.back().result;
  return e.successor ? positive_mod(chain + 1, modulus) : chain;
}

// ---------------------------------------------------------------------------
// Problem generation

static Expression sample_expression(const TaskConfig& cfg, int n_operands, Rng& rng) {
  Expression e;
  e.successor = cfg.family == Family::retention;
  e.operands.reserve(static_cast<std::size_t>(n_operands));
  for (int i = 0; i < n_operands; ++i) {
    e.operands.push_back(rng.range(cfg.operand_min, cfg.operand_max));
    if (i + 1 < n_operands) {
      e.ops.push_back(cfg.operators[static_cast<std::size_t>(rng.below(cfg.operators.size()))]);
    }
  }
  return e;
}

ProblemSet gen_problems(const TaskConfig& cfg, const SplitCounts& counts, std::uint64_t seed) {
  cfg.validate();
  require(counts.train >= 0 && counts.validation >= 0 && counts.test >= 0 && counts.retention >= 0,
          Errc::config, "split counts must be nonnegative");

  ProblemSet ps;
  ps.task = cfg;
  std::unordered_set<std::string> seen;
  int next_id = 0;

  struct SplitPlan {
    Split split;
    int count;
    int extra_operands;  // the test split probes a shifted operand-count range
  };
  const SplitPlan plans[] = {
      {Split::train, counts.train, 0},
      {Split::validation, counts.validation, 0},
      {Split::test, counts.test, 1},
      {Split::retention, counts.retention, 0},
  };

  for (const SplitPlan& plan : plans) {
    if (plan.count == 0) continue;
    Rng rng(derive_seed(seed, "gen-split", static_cast<int>(plan.split)));
    long long attempts_left = 1000 + 200LL * plan.count;
    int produced = 0;
    while (produced < plan.count) {
      require(attempts_left-- > 0, Errc::config,
              "task space too small to generate the requested distinct problems");
      int n = static_cast<int>(rng.range(cfg.n_operands_min + plan.extra_operands,
                                         cfg.n_operands_max + plan.extra_operands));
      Expression e = sample_expression(cfg, n, rng);
      // The retention split probes the complementary family: its surface
      // strings never occur in the other splits, so accuracy there measures
      // what the base knew that distillation could erase.
      if (plan.split == Split::retention) e.successor = !e.successor;
      std::string prompt = e.render_prompt();
      if (!seen.insert(prompt).second) continue;
      Problem p;
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%06d", next_id++);
      p.id = (e.successor ? "r-" : "p-") + std::string(buf);
      p.prompt_text = std::move(prompt);
      p.reference_answer = evaluate(e, cfg.modulus);
      p.split = plan.split;
      ps.problems.push_back(std::move(p));
      ++produced;
    }
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Teachers

void TeacherSpec::validate() const {
  require(!teacher_id.empty(), Errc::config, "teacher_id must be nonempty");
  require(step_error_rate >= 0.0 && step_error_rate <= 1.0, Errc::config,
          "step_error_rate must be in [0,1]");
  require(lexical_shift >= 0.0 && lexical_shift <= 1.0, Errc::config,
          "lexical_shift must be in [0,1]");
  require(samples_per_prompt >= 1, Errc::config, "samples_per_prompt must be positive");
}

std::string TeacherSpec::canonical() const {
  std::ostringstream os;
  os << "teacher{id=" << teacher_id << ";style=" << style_name(style)
     << ";step_error_rate=" << step_error_rate << ";lexical_shift=" << lexical_shift
     << ";samples=" << samples_per_prompt << "}";
  return os.str();
}

namespace {

struct LineToken {
  std::string text;
  bool substitutable = false;
};

std::string substitute_token(const std::string& t) {
  if (t == "step") return "mv";
  if (t == ":") return "|";
  if (t == "=") return "<<";
  if (t == "+") return "pls";
  if (t == "-") return "mns";
  if (t == "*") return "mul";
  return t;
}

// One rationale line for one work step, as a token list plus joiner policy.
std::vector<LineToken> step_tokens(Style style, int index, const WorkStep& st) {
  auto num = [](long long v) { return LineToken{std::to_string(v), false}; };
  auto lit = [](const char* s) { return LineToken{s, true}; };
  auto fixed = [](std::string s) { return LineToken{std::move(s), false}; };
  LineToken op{std::string(1, op_symbol(st.op)), true};

  std::vector<LineToken> t;
  switch (style) {
    case Style::terse:
      t = {lit("step"), fixed(std::to_string(index) + ":"), num(st.lhs), op, num(st.rhs),
           lit("="), num(st.result)};
      break;
    case Style::verbose:
      // Wordier framing around the same arithmetic core. Keeping the
      // "<a> <op> <b> = <c>" spine identical across the clean styles keeps
      // their gradient directions compatible enough for weight averaging at
      // this model scale; the style lives in the decorations.
      t = {lit("step"),  fixed(std::to_string(index) + ":"),
           fixed("take"), num(st.lhs),
           op,            num(st.rhs),
           lit("="),      num(st.result),
           fixed("ok")};
      break;
    case Style::named:
      // Each intermediate result is named t<i> in the line label; the
      // arithmetic core matches the other clean styles (see above).
      t = {fixed("t" + std::to_string(index) + ":"), num(st.lhs), op, num(st.rhs), lit("="),
           num(st.result)};
      break;
    case Style::shifted:
      // Result-first phrasing: the step value precedes the operands.
      t = {lit("step"), fixed(std::to_string(index)), lit(":"), num(st.result),
           lit("="),    num(st.lhs),                  op,       num(st.rhs)};
      break;
  }
  return t;
}

std::string render_line(const std::vector<LineToken>& tokens, double lexical_shift, Rng& rng) {
  std::string out;
  for (const LineToken& tok : tokens) {
    if (!out.empty()) out += ' ';
    if (tok.substitutable && lexical_shift > 0.0 && rng.uniform() < lexical_shift) {
      out += substitute_token(tok.text);
    } else {
      out += tok.text;
    }
  }
  return out;
}

struct SimulatedTrace {
  std::vector<WorkStep> shown;  // steps along the (possibly corrupted) path
  long long final_value = 0;
  int corrupted_steps = 0;
};

// Walks the expression while injecting step corruptions. Draws are
// constrained so a corrupted path never re-joins the true value at the point
// of corruption; for +/- chains the divergence then provably survives to the
// final answer. Multiplication can still collapse the error downstream, so
// the caller retries with fresh salt and, as a last resort, corrupts the
// final value directly.
SimulatedTrace simulate_steps(const Expression& e, long long modulus, double error_rate,
                              Rng& rng) {
  SimulatedTrace out;
  long long true_acc = positive_mod(e.operands[0], modulus);
  long long cur = true_acc;
  for (std::size_t i = 0; i < e.ops.size(); ++i) {
    long long rhs = e.operands[i + 1];
    true_acc = apply_op(true_acc, e.ops[i], rhs, modulus);
    long long base = apply_op(cur, e.ops[i], rhs, modulus);
    long long shown = base;
    if (error_rate > 0.0 && rng.uniform() < error_rate) {
      for (int tries = 0; tries < 64; ++tries) {
        long long delta = rng.range(1, 3) * (rng.uniform() < 0.5 ? 1 : -1);
        long long candidate = positive_mod(base + delta, modulus);
        shown = candidate;
        if (candidate != true_acc) break;
      }
      ++out.corrupted_steps;
    }
    out.shown.push_back(WorkStep{cur, e.ops[i], rhs, shown});
    cur = shown;
  }
  out.final_value = cur;
  return out;
}

}  // namespace

std::vector<TeacherTrace> teacher_generate(const TeacherSpec& spec, const Problem& p,
                                           std::uint64_t seed, long long modulus) {
  spec.validate();
  require(modulus >= 2, Errc::config, "modulus must be >= 2");
  Expression expr = parse_prompt(p.prompt_text);
  const long long reference = evaluate(expr, modulus);

  std::vector<TeacherTrace> traces;
  traces.reserve(static_cast<std::size_t>(spec.samples_per_prompt));
  std::uint64_t prompt_seed = derive_seed(seed, p.id + "|" + spec.teacher_id);
  // The answer line shows the successor of the chain value for retention-
  // family prompts; the step lines are family-independent.
  auto answer_of = [&](long long chain) {
    return expr.successor ? positive_mod(chain + 1, modulus) : chain;
  };

  for (int k = 0; k < spec.samples_per_prompt; ++k) {
    // A corrupted walk must end away from the reference answer. With +/-
    // chains the per-step draw guard already guarantees that; multiplication
    // can collapse an injected error downstream, so retry with fresh salt
    // and, as a last resort, corrupt the final value directly.
    SimulatedTrace sim;
    for (int attempt = 0; attempt < 64; ++attempt) {
      Rng rng(derive_seed(prompt_seed, "sample", k, attempt));
      sim = simulate_steps(expr, modulus, spec.step_error_rate, rng);
      if (sim.corrupted_steps == 0 || answer_of(sim.final_value) != reference) break;
    }
    if (sim.corrupted_steps > 0 && answer_of(sim.final_value) == reference) {
      sim.final_value = positive_mod(sim.final_value + 1, modulus);
      ++sim.corrupted_steps;
    }

    Rng style_rng(derive_seed(prompt_seed, "style", k));
    std::string text;
    for (std::size_t i = 0; i < sim.shown.size(); ++i) {
      text += render_line(step_tokens(spec.style, static_cast<int>(i) + 1, sim.shown[i]),
                          spec.lexical_shift, style_rng);
      text += '\n';
    }
    text += render_answer_line(answer_of(sim.final_value));

    TeacherTrace tr;
    tr.problem_id = p.id;
    tr.teacher_id = spec.teacher_id;
    tr.rationale_text = std::move(text);
    tr.extracted_answer = extract_answer(tr.rationale_text);
    tr.correct = tr.extracted_answer.has_value() && *tr.extracted_answer == p.reference_answer;
    tr.corrupted_steps = sim.corrupted_steps;
    traces.push_back(std::move(tr));
  }
  return traces;
}

// ---------------------------------------------------------------------------
// Corpus construction

DistillCorpus build_distill_corpus(const std::vector<TeacherTrace>& traces,
                                   const ProblemSet& problems, std::uint64_t seed,
                                   bool answer_filter) {
  DistillCorpus corpus;
  std::unordered_map<std::string, const Problem*> by_id;
  for (const Problem& p : problems.problems) by_id[p.id] = &p;

  std::unordered_map<std::string, std::vector<const TeacherTrace*>> grouped;
  for (const TeacherTrace& tr : traces) {
    require(by_id.count(tr.problem_id) > 0, Errc::integrity,
            "trace references unknown problem_id: " + tr.problem_id);
    if (corpus.teacher_id.empty()) {
      corpus.teacher_id = tr.teacher_id;
    } else {
      require(corpus.teacher_id == tr.teacher_id, Errc::integrity,
              "traces from multiple teachers; build one corpus per teacher");
    }
    grouped[tr.problem_id].push_back(&tr);
  }

  for (const Problem& p : problems.problems) {
    auto it = grouped.find(p.id);
    if (it == grouped.end()) continue;
    std::vector<const TeacherTrace*> candidates;
    int correct_count = 0;
    for (const TeacherTrace* tr : it->second) {
      if (tr->correct) ++correct_count;
      if (!answer_filter || tr->correct) candidates.push_back(tr);
    }
    corpus.source_counts[p.id] = correct_count;
    if (candidates.empty()) continue;
    Rng rng(derive_seed(seed, "pick|" + p.id));
    const TeacherTrace* chosen = candidates[rng.below(candidates.size())];
    DistillExample ex;
    ex.problem_id = p.id;
    ex.teacher_id = chosen->teacher_id;
    ex.prompt_text = p.prompt_text;
    ex.target_text = chosen->rationale_text;
    ex.reference_answer = p.reference_answer;
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

DistillCorpus union_corpora(const std::vector<DistillCorpus>& corpora) {
  require(!corpora.empty(), Errc::precondition, "union of zero corpora");
  DistillCorpus out;
  out.teacher_id = kUnionTeacherId;
  std::set<std::pair<std::string, std::string>> seen;
  for (const DistillCorpus& c : corpora) {
    for (const DistillExample& ex : c.examples) {
      require(seen.emplace(ex.problem_id, ex.teacher_id).second, Errc::integrity,
              "duplicate (problem, teacher) pair in union: " + ex.problem_id + "/" +
                  ex.teacher_id);
      out.examples.push_back(ex);
    }
    for (const auto& [pid, n] : c.source_counts) out.source_counts[pid] += n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSONL persistence

static std::string corpus_to_jsonl(const DistillCorpus& corpus) {
  std::string out;
  for (const DistillExample& ex : corpus.examples) {
    json j;
    j["problem_id"] = ex.problem_id;
    j["teacher_id"] = ex.teacher_id;
    j["prompt_text"] = ex.prompt_text;
    j["target_text"] = ex.target_text;
    j["reference_answer"] = ex.reference_answer;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::uint64_t DistillCorpus::content_digest() const { return fnv1a(corpus_to_jsonl(*this)); }

void export_jsonl(const DistillCorpus& corpus, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), Errc::io, "cannot open for write: " + path);
  f << corpus_to_jsonl(corpus);
  require(f.good(), Errc::io, "write failed: " + path);
}

namespace {

json parse_jsonl_line(const std::string& line, int line_no, const std::string& path) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    fail(Errc::parse, path + ": malformed JSONL at line " + std::to_string(line_no));
  }
  return j;
}

template <class T>
T field(const json& j, const char* key, int line_no, const std::string& path) {
  if (!j.contains(key)) {
    fail(Errc::parse,
         path + ": missing field '" + key + "' at line " + std::to_string(line_no));
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(Errc::parse, path + ": bad field '" + key + "' at line " + std::to_string(line_no));
  }
}

}  // namespace

DistillCorpus import_jsonl(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::io, "cannot open: " + path);
  DistillCorpus corpus;
  std::string line;
  int line_no = 0;
  bool mixed = false;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = parse_jsonl_line(line, line_no, path);
    DistillExample ex;
    ex.problem_id = field<std::string>(j, "problem_id", line_no, path);
    ex.teacher_id = field<std::string>(j, "teacher_id", line_no, path);
    ex.prompt_text = field<std::string>(j, "prompt_text", line_no, path);
    ex.target_text = field<std::string>(j, "target_text", line_no, path);
    ex.reference_answer = field<long long>(j, "reference_answer", line_no, path);
    if (corpus.teacher_id.empty()) {
      corpus.teacher_id = ex.teacher_id;
    } else if (corpus.teacher_id != ex.teacher_id) {
      mixed = true;
    }
    corpus.examples.push_back(std::move(ex));
  }
  if (mixed) corpus.teacher_id = kUnionTeacherId;
  return corpus;
}

void export_problems_jsonl(const ProblemSet& ps, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), Errc::io, "cannot open for write: " + path);
  for (const Problem& p : ps.problems) {
    json j;
    j["id"] = p.id;
    j["prompt_text"] = p.prompt_text;
    j["reference_answer"] = p.reference_answer;
    j["split"] = split_name(p.split);
    f << j.dump() << '\n';
  }
  require(f.good(), Errc::io, "write failed: " + path);
}

ProblemSet import_problems_jsonl(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::io, "cannot open: " + path);
  ProblemSet ps;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = parse_jsonl_line(line, line_no, path);
    Problem p;
    p.id = field<std::string>(j, "id", line_no, path);
    p.prompt_text = field<std::string>(j, "prompt_text", line_no, path);
    p.reference_answer = field<long long>(j, "reference_answer", line_no, path);
    p.split = split_from_name(field<std::string>(j, "split", line_no, path));
    ps.problems.push_back(std::move(p));
  }
  return ps;
}

}  // namespace mot::corpus
