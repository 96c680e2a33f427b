#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mot/error.hpp"

namespace mot::corpus {

enum class Op { add, sub, mul };

char op_symbol(Op op);
Op op_from_symbol(const std::string& s);

enum class Family { primary, retention };
enum class Split { train, validation, test, retention };

const char* split_name(Split s);
Split split_from_name(const std::string& s);

// Task family: render N operands joined by operators, evaluate left-to-right
// with a modulo reduction after every step. The retention family shows the
// same chains behind a "next" marker and asks for the successor of the chain
// value (answer + 1 mod m): its surface strings never occur in the primary
// family, and its answer rule is knowledge the primary family never teaches.
struct TaskConfig {
  int n_operands_min = 5;
  int n_operands_max = 5;
  long long operand_min = 1;
  long long operand_max = 2;
  std::vector<Op> operators = {Op::add, Op::sub};
  long long modulus = 2;
  Family family = Family::primary;

  void validate() const;
  std::string canonical() const;  // stable one-line rendering for digests
};

struct Problem {
  std::string id;
  std::string prompt_text;
  long long reference_answer = 0;
  Split split = Split::train;
};

struct ProblemSet {
  TaskConfig task;
  std::vector<Problem> problems;

  const Problem* find(const std::string& id) const;
  std::vector<const Problem*> of_split(Split s) const;
};

struct SplitCounts {
  int train = 0;
  int validation = 0;
  int test = 0;
  int retention = 0;
};

// Deterministic problem generation. The test split is drawn from a shifted
// operand-count range (one extra operand) and a disjoint seed stream so the
// two held-out splits probe different regions of the task. The retention
// split draws from the complementary family (successor prompts under a
// primary config), so scores there track skills distillation never trains.
ProblemSet gen_problems(const TaskConfig& cfg, const SplitCounts& counts, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Teachers

enum class Style { verbose, named, terse, shifted };

const char* style_name(Style s);
Style style_from_name(const std::string& s);

struct TeacherSpec {
  std::string teacher_id;
  Style style = Style::terse;
  double step_error_rate = 0.0;  // chance a step result is corrupted (propagates)
  double lexical_shift = 0.0;    // chance a rationale token is swapped from the synonym table
  int samples_per_prompt = 16;

  void validate() const;
  std::string canonical() const;
};

struct TeacherTrace {
  std::string problem_id;
  std::string teacher_id;
  std::string rationale_text;  // step lines plus final answer sentinel line
  std::optional<long long> extracted_answer;
  bool correct = false;
  int corrupted_steps = 0;  // ground-truth corruption count (not serialized)
};

// Produces spec.samples_per_prompt stochastic traces for one problem.
// A corrupted step replaces its result with result+delta (delta in
// {-3..3}\{0}) and the error propagates; draws are constrained so that any
// corruption leaves the final answer wrong. Corrupted traces are returned
// with correct=false, never dropped here. The task modulus is passed in
// because step results are reduced exactly like the reference answers.
std::vector<TeacherTrace> teacher_generate(const TeacherSpec& spec, const Problem& p,
                                           std::uint64_t seed, long long modulus);

// ---------------------------------------------------------------------------
// Distillation corpora

struct DistillExample {
  std::string problem_id;
  std::string teacher_id;
  std::string prompt_text;
  std::string target_text;  // rationale including the answer sentinel line
  long long reference_answer = 0;
};

inline constexpr const char* kUnionTeacherId = "UNION";

struct DistillCorpus {
  std::string teacher_id;  // single teacher id, or UNION for aggregates
  std::vector<DistillExample> examples;
  std::map<std::string, int> source_counts;  // problem_id -> correct candidates

  std::size_t size() const { return examples.size(); }
  std::uint64_t content_digest() const;  // over canonical JSONL rendering
};

// Answer filtering and uniform selection: keeps one uniformly-chosen correct
// trace per prompt, drops prompts with no correct trace. With answer_filter
// off (diagnostic mode) selection is uniform over all traces instead.
DistillCorpus build_distill_corpus(const std::vector<TeacherTrace>& traces,
                                   const ProblemSet& problems, std::uint64_t seed,
                                   bool answer_filter = true);

// Aggregate of per-teacher corpora; per-example teacher provenance survives.
DistillCorpus union_corpora(const std::vector<DistillCorpus>& corpora);

// ---------------------------------------------------------------------------
// JSONL persistence

void export_jsonl(const DistillCorpus& corpus, const std::string& path);
DistillCorpus import_jsonl(const std::string& path);

void export_problems_jsonl(const ProblemSet& ps, const std::string& path);
ProblemSet import_problems_jsonl(const std::string& path);

// ---------------------------------------------------------------------------
// Expression plumbing shared by generation, teachers, and tests.

struct Expression {
  std::vector<long long> operands;
  std::vector<Op> ops;      // ops.size() + 1 == operands.size()
  bool successor = false;   // "next" marker: answer is the chain value + 1 (mod m)

  std::string render_prompt() const;
};

struct WorkStep {
  long long lhs = 0;  // running value entering the step
  Op op = Op::add;
  long long rhs = 0;
  long long result = 0;  // (lhs op rhs) mod m, in [0, m)
};

// Parses a prompt back into its expression; throws Errc::parse on malformed text.
Expression parse_prompt(const std::string& prompt_text);

// Left-to-right reduction with a modulo after every step. The step chain is
// identical for both families; only the final answer differs for successor
// expressions, where evaluate() returns the chain value + 1 (mod m).
std::vector<WorkStep> work_steps(const Expression& e, long long modulus);
long long evaluate(const Expression& e, long long modulus);

}  // namespace mot::corpus
