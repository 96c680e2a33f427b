#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mot/answer.hpp"
#include "mot/corpus.hpp"
#include "mot/error.hpp"

using namespace mot;
using namespace mot::corpus;

namespace {

TaskConfig small_task() {
  TaskConfig cfg;
  cfg.n_operands_min = 3;
  cfg.n_operands_max = 4;
  cfg.operand_min = 2;
  cfg.operand_max = 9;
  cfg.modulus = 10;
  return cfg;
}

Problem make_problem(const std::string& id, const std::string& prompt, long long answer,
                     Split split = Split::train) {
  Problem p;
  p.id = id;
  p.prompt_text = prompt;
  p.reference_answer = answer;
  p.split = split;
  return p;
}

std::string temp_path(const std::string& name) {
  return "/tmp/mot_corpus_test_" + name;
}

}  // namespace

// ---------------------------------------------------------------------------
// Expression arithmetic

TEST_CASE("evaluate reduces left-to-right with a modulo after every step") {
  // 4 - 5 + 3 mod 10: (4-5)=-1 -> 9; 9+3=12 -> 2.
  Expression e = parse_prompt("4 - 5 + 3");
  REQUIRE(e.operands == std::vector<long long>{4, 5, 3});
  REQUIRE(e.ops.size() == 2);
  CHECK(evaluate(e, 10) == 2);

  auto steps = work_steps(e, 10);
  REQUIRE(steps.size() == 2);
  CHECK(steps[0].lhs == 4);
  CHECK(steps[0].rhs == 5);
  CHECK(steps[0].result == 9);
  CHECK(steps[1].lhs == 9);
  CHECK(steps[1].rhs == 3);
  CHECK(steps[1].result == 2);
}

TEST_CASE("evaluate handles multiplication and negative intermediates") {
  // 3 * 4 - 5 mod 10: 12 -> 2; 2-5=-3 -> 7.
  CHECK(evaluate(parse_prompt("3 * 4 - 5"), 10) == 7);
  // First operand is reduced before any step: 12 mod 7 = 5; 5+3=8 -> 1.
  CHECK(evaluate(parse_prompt("12 + 3"), 7) == 1);
  // Left-to-right, not precedence: 2 + 3 * 4 = (2+3)*4 = 20 -> 0 mod 10.
  CHECK(evaluate(parse_prompt("2 + 3 * 4"), 10) == 0);
}

TEST_CASE("results always land in [0, modulus)") {
  Expression e = parse_prompt("2 - 9 - 9 - 9");
  for (const WorkStep& st : work_steps(e, 10)) {
    CHECK(st.result >= 0);
    CHECK(st.result < 10);
  }
}

TEST_CASE("prompt rendering and parsing are inverse") {
  Expression e;
  e.operands = {7, 2, 9};
  e.ops = {Op::sub, Op::add};
  CHECK(e.render_prompt() == "7 - 2 + 9");
  Expression back = parse_prompt(e.render_prompt());
  CHECK(back.operands == e.operands);
  CHECK(back.ops == e.ops);
  CHECK_FALSE(back.successor);
}

TEST_CASE("successor prompts keep the chain but shift the answer by one") {
  Expression e;
  e.operands = {7, 2, 9};
  e.ops = {Op::sub, Op::add};
  e.successor = true;
  CHECK(e.render_prompt() == "next 7 - 2 + 9");

  Expression back = parse_prompt("next 7 - 2 + 9");
  CHECK(back.successor);
  CHECK(back.operands == std::vector<long long>{7, 2, 9});
  REQUIRE(back.ops.size() == 2);
  CHECK(back.ops[0] == Op::sub);
  CHECK(back.ops[1] == Op::add);
  // 7-2+9 = 14 -> 4 mod 10; the successor family answers 4+1 = 5.
  CHECK(evaluate(parse_prompt("7 - 2 + 9"), 10) == 4);
  CHECK(evaluate(back, 10) == 5);
  // The step chain itself is family-independent.
  std::vector<WorkStep> plain = work_steps(parse_prompt("7 - 2 + 9"), 10);
  std::vector<WorkStep> marked = work_steps(back, 10);
  REQUIRE(plain.size() == marked.size());
  for (std::size_t i = 0; i < plain.size(); ++i) {
    CHECK(plain[i].result == marked[i].result);
  }
  // The wrap case: chain value m-1 answers 0.
  CHECK(evaluate(parse_prompt("next 4 + 5"), 10) == 0);
}

TEST_CASE("malformed prompts raise parse errors") {
  CHECK_THROWS_AS(parse_prompt(""), Error);
  CHECK_THROWS_AS(parse_prompt("3 +"), Error);
  CHECK_THROWS_AS(parse_prompt("+ 3 4"), Error);
  CHECK_THROWS_AS(parse_prompt("3 ? 4"), Error);
  CHECK_THROWS_AS(parse_prompt("3 4"), Error);
  try {
    parse_prompt("3 +");
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::parse);
  }
}

TEST_CASE("answer sentinel extraction") {
  CHECK(extract_answer("=> ANSWER: 7") == 7);
  CHECK(extract_answer("step 1: ...\n=> ANSWER: 12") == 12);
  // The last sentinel wins.
  CHECK(extract_answer("=> ANSWER: 3\n=> ANSWER: 4") == 4);
  CHECK_FALSE(extract_answer("no sentinel here").has_value());
  CHECK_FALSE(extract_answer("=> ANSWER: x").has_value());
}

// ---------------------------------------------------------------------------
// Problem generation

TEST_CASE("gen_problems is deterministic and honors split counts") {
  TaskConfig cfg = small_task();
  SplitCounts counts{40, 8, 8, 6};
  ProblemSet a = gen_problems(cfg, counts, 5);
  ProblemSet b = gen_problems(cfg, counts, 5);
  REQUIRE(a.problems.size() == 62);
  for (std::size_t i = 0; i < a.problems.size(); ++i) {
    CHECK(a.problems[i].id == b.problems[i].id);
    CHECK(a.problems[i].prompt_text == b.problems[i].prompt_text);
    CHECK(a.problems[i].reference_answer == b.problems[i].reference_answer);
    CHECK(a.problems[i].split == b.problems[i].split);
  }
  CHECK(a.of_split(Split::train).size() == 40);
  CHECK(a.of_split(Split::validation).size() == 8);
  CHECK(a.of_split(Split::test).size() == 8);
  CHECK(a.of_split(Split::retention).size() == 6);

  ProblemSet c = gen_problems(cfg, counts, 6);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.problems.size(); ++i) {
    any_diff = any_diff || a.problems[i].prompt_text != c.problems[i].prompt_text;
  }
  CHECK(any_diff);
}

TEST_CASE("generated prompts are unique and self-consistent") {
  ProblemSet ps = gen_problems(small_task(), SplitCounts{60, 10, 10, 10}, 17);
  std::set<std::string> prompts;
  for (const Problem& p : ps.problems) {
    CHECK(prompts.insert(p.prompt_text).second);
    Expression e = parse_prompt(p.prompt_text);
    CHECK(evaluate(e, 10) == p.reference_answer);
    CHECK(p.reference_answer >= 0);
    CHECK(p.reference_answer < 10);
  }
  CHECK(ps.find("p-000000") != nullptr);
  CHECK(ps.find("missing") == nullptr);
}

TEST_CASE("test split draws one extra operand") {
  TaskConfig cfg = small_task();  // 3..4 operands
  ProblemSet ps = gen_problems(cfg, SplitCounts{30, 10, 10, 0}, 23);
  for (const Problem* p : ps.of_split(Split::train)) {
    std::size_t n = parse_prompt(p->prompt_text).operands.size();
    CHECK(n >= 3);
    CHECK(n <= 4);
  }
  for (const Problem* p : ps.of_split(Split::test)) {
    std::size_t n = parse_prompt(p->prompt_text).operands.size();
    CHECK(n >= 4);
    CHECK(n <= 5);
  }
}

TEST_CASE("retention split carries the complementary family") {
  ProblemSet ps = gen_problems(small_task(), SplitCounts{10, 4, 4, 8}, 31);
  for (const Problem* p : ps.of_split(Split::retention)) {
    CHECK(parse_prompt(p->prompt_text).successor);
    CHECK(p->prompt_text.substr(0, 5) == "next ");
    CHECK(p->id.substr(0, 2) == "r-");
  }
  for (const Problem* p : ps.of_split(Split::train)) {
    CHECK_FALSE(parse_prompt(p->prompt_text).successor);
    CHECK(p->id.substr(0, 2) == "p-");
  }

  TaskConfig successor_cfg = small_task();
  successor_cfg.family = Family::retention;
  ProblemSet fs = gen_problems(successor_cfg, SplitCounts{10, 0, 0, 4}, 31);
  for (const Problem* p : fs.of_split(Split::train)) {
    CHECK(parse_prompt(p->prompt_text).successor);
  }
  for (const Problem* p : fs.of_split(Split::retention)) {
    CHECK_FALSE(parse_prompt(p->prompt_text).successor);
  }
}

TEST_CASE("impossible uniqueness demands fail with a config error") {
  TaskConfig cfg = small_task();
  cfg.n_operands_min = 3;
  cfg.n_operands_max = 3;
  cfg.operand_min = 2;
  cfg.operand_max = 3;  // 2 ops x 2^3 operand choices = 32 distinct prompts max
  CHECK_THROWS_AS(gen_problems(cfg, SplitCounts{200, 0, 0, 0}, 1), Error);
}

TEST_CASE("task config validation rejects nonsense") {
  TaskConfig cfg = small_task();
  cfg.modulus = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_task();
  cfg.n_operands_min = 2;
  cfg.n_operands_max = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_task();
  cfg.operators.clear();
  CHECK_THROWS_AS(cfg.validate(), Error);
}

// ---------------------------------------------------------------------------
// Teachers

TEST_CASE("a clean teacher reproduces the reference answer on every sample") {
  TeacherSpec spec;
  spec.teacher_id = "T";
  spec.style = Style::terse;
  spec.samples_per_prompt = 8;
  Problem p = make_problem("p-000000", "4 - 5 + 3", 2);
  auto traces = teacher_generate(spec, p, 99, 10);
  REQUIRE(traces.size() == 8);
  for (const TeacherTrace& tr : traces) {
    CHECK(tr.correct);
    CHECK(tr.extracted_answer == 2);
    CHECK(tr.corrupted_steps == 0);
    CHECK(tr.problem_id == "p-000000");
    CHECK(tr.teacher_id == "T");
  }
}

TEST_CASE("a clean teacher on a successor prompt shows the shifted answer") {
  TeacherSpec spec;
  spec.teacher_id = "T";
  spec.style = Style::terse;
  spec.samples_per_prompt = 4;
  // Chain 4-5+3 mod 10: 9, then 2; the successor family answers 3.
  Problem p = make_problem("r-000000", "next 4 - 5 + 3", 3);
  auto traces = teacher_generate(spec, p, 99, 10);
  REQUIRE(traces.size() == 4);
  for (const TeacherTrace& tr : traces) {
    CHECK(tr.correct);
    CHECK(tr.extracted_answer == 3);
    CHECK(tr.corrupted_steps == 0);
  }
  CHECK(traces[0].rationale_text ==
        "step 1: 4 - 5 = 9\n"
        "step 2: 9 + 3 = 2\n"
        "=> ANSWER: 3");

  // Corrupted successor traces still always end away from the reference.
  spec.step_error_rate = 1.0;
  for (const TeacherTrace& tr : teacher_generate(spec, p, 99, 10)) {
    CHECK_FALSE(tr.correct);
    CHECK(tr.extracted_answer != 3);
  }
}

TEST_CASE("styles render the hand-derived fixture lines") {
  Problem p = make_problem("p-000000", "4 - 5 + 3", 2);
  auto trace_text = [&](Style style) {
    TeacherSpec spec;
    spec.teacher_id = "T";
    spec.style = style;
    spec.samples_per_prompt = 1;
    return teacher_generate(spec, p, 1, 10)[0].rationale_text;
  };

  CHECK(trace_text(Style::terse) ==
        "step 1: 4 - 5 = 9\n"
        "step 2: 9 + 3 = 2\n"
        "=> ANSWER: 2");
  CHECK(trace_text(Style::verbose) ==
        "step 1: take 4 - 5 = 9 ok\n"
        "step 2: take 9 + 3 = 2 ok\n"
        "=> ANSWER: 2");
  CHECK(trace_text(Style::named) ==
        "t1: 4 - 5 = 9\n"
        "t2: 9 + 3 = 2\n"
        "=> ANSWER: 2");
  // Result-first ordering, no dialect at lexical_shift = 0.
  CHECK(trace_text(Style::shifted) ==
        "step 1 : 9 = 4 - 5\n"
        "step 2 : 2 = 9 + 3\n"
        "=> ANSWER: 2");
}

TEST_CASE("full lexical shift swaps every substitutable token") {
  TeacherSpec spec;
  spec.teacher_id = "T";
  spec.style = Style::shifted;
  spec.lexical_shift = 1.0;
  spec.samples_per_prompt = 1;
  Problem p = make_problem("p-000000", "4 - 5 + 3", 2);
  std::string text = teacher_generate(spec, p, 1, 10)[0].rationale_text;
  CHECK(text ==
        "mv 1 | 9 << 4 mns 5\n"
        "mv 2 | 2 << 9 pls 3\n"
        "=> ANSWER: 2");
  // The answer sentinel is never shifted: that is what answer filtering keys on.
  CHECK(text.find(kAnswerSentinel) != std::string::npos);
}

TEST_CASE("teacher generation is deterministic in all its seeds") {
  TeacherSpec spec;
  spec.teacher_id = "T";
  spec.step_error_rate = 0.5;
  spec.lexical_shift = 0.5;
  spec.style = Style::shifted;
  spec.samples_per_prompt = 6;
  Problem p = make_problem("p-000001", "9 - 6 + 9", 2);
  auto a = teacher_generate(spec, p, 7, 10);
  auto b = teacher_generate(spec, p, 7, 10);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].rationale_text == b[i].rationale_text);
    CHECK(a[i].correct == b[i].correct);
  }
  auto c = teacher_generate(spec, p, 8, 10);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    any_diff = any_diff || a[i].rationale_text != c[i].rationale_text;
  }
  CHECK(any_diff);
}

TEST_CASE("every corrupted trace ends away from the reference answer") {
  TeacherSpec spec;
  spec.teacher_id = "T";
  spec.step_error_rate = 0.5;
  spec.samples_per_prompt = 40;
  TaskConfig cfg = small_task();
  ProblemSet ps = gen_problems(cfg, SplitCounts{30, 0, 0, 0}, 3);
  int corrupted_traces = 0;
  for (const Problem& p : ps.problems) {
    for (const TeacherTrace& tr : teacher_generate(spec, p, 11, 10)) {
      if (tr.corrupted_steps > 0) {
        ++corrupted_traces;
        CHECK_FALSE(tr.correct);
        REQUIRE(tr.extracted_answer.has_value());
        CHECK(*tr.extracted_answer != p.reference_answer);
      } else {
        CHECK(tr.correct);
      }
    }
  }
  // At rate 0.5 on 2-3 step problems, a large majority of 1200 traces corrupt.
  CHECK(corrupted_traces > 600);
}

TEST_CASE("corruption count matches a binomial envelope at the configured rate") {
  TeacherSpec spec;
  spec.teacher_id = "T";
  spec.step_error_rate = 0.2;
  spec.samples_per_prompt = 1;
  TaskConfig cfg = small_task();
  cfg.n_operands_min = 4;
  cfg.n_operands_max = 4;  // exactly 3 steps per problem
  ProblemSet ps = gen_problems(cfg, SplitCounts{300, 0, 0, 0}, 9);
  long long corrupted = 0, steps_total = 0;
  for (const Problem& p : ps.problems) {
    auto traces = teacher_generate(spec, p, 21, 10);
    corrupted += traces[0].corrupted_steps;
    steps_total += 3;
  }
  // Binomial(900, 0.2): mean 180, sd = sqrt(900*0.2*0.8) = 12. Allow 5 sigma.
  CHECK(corrupted > 180 - 60);
  CHECK(corrupted < 180 + 60);
}

TEST_CASE("teacher spec validation") {
  TeacherSpec spec;
  spec.teacher_id = "";
  CHECK_THROWS_AS(spec.validate(), Error);
  spec.teacher_id = "T";
  spec.step_error_rate = 1.5;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec.step_error_rate = 0.0;
  spec.samples_per_prompt = 0;
  CHECK_THROWS_AS(spec.validate(), Error);
}

// ---------------------------------------------------------------------------
// Corpus construction

TEST_CASE("answer filtering keeps exactly one correct trace per covered prompt") {
  TeacherSpec clean;
  clean.teacher_id = "T";
  clean.samples_per_prompt = 16;
  ProblemSet ps = gen_problems(small_task(), SplitCounts{50, 0, 0, 0}, 13);
  std::vector<TeacherTrace> traces;
  for (const Problem& p : ps.problems) {
    for (auto& tr : teacher_generate(clean, p, 5, 10)) traces.push_back(std::move(tr));
  }
  DistillCorpus corpus = build_distill_corpus(traces, ps, 31);
  CHECK(corpus.size() == 50);  // an error-free teacher covers every prompt
  CHECK(corpus.teacher_id == "T");
  std::set<std::string> ids;
  for (const DistillExample& ex : corpus.examples) {
    CHECK(ids.insert(ex.problem_id).second);
    CHECK(extract_answer(ex.target_text) == ex.reference_answer);
    const Problem* p = ps.find(ex.problem_id);
    REQUIRE(p != nullptr);
    CHECK(ex.prompt_text == p->prompt_text);
  }
  for (const auto& [pid, count] : corpus.source_counts) CHECK(count == 16);
}

TEST_CASE("an always-wrong teacher filters to an empty corpus") {
  TeacherSpec broken;
  broken.teacher_id = "B";
  broken.step_error_rate = 1.0;
  broken.samples_per_prompt = 8;
  ProblemSet ps = gen_problems(small_task(), SplitCounts{20, 0, 0, 0}, 13);
  std::vector<TeacherTrace> traces;
  for (const Problem& p : ps.problems) {
    for (auto& tr : teacher_generate(broken, p, 5, 10)) traces.push_back(std::move(tr));
  }
  DistillCorpus corpus = build_distill_corpus(traces, ps, 31);
  CHECK(corpus.size() == 0);
}

TEST_CASE("selection among correct candidates is uniform") {
  // Construct 4 distinct correct traces per prompt by hand and count which
  // index survives filtering across many prompts.
  TaskConfig cfg = small_task();
  ProblemSet ps = gen_problems(cfg, SplitCounts{400, 0, 0, 0}, 41);
  std::vector<TeacherTrace> traces;
  for (const Problem& p : ps.problems) {
    for (int k = 0; k < 4; ++k) {
      TeacherTrace tr;
      tr.problem_id = p.id;
      tr.teacher_id = "T";
      // Distinct texts sharing a correct sentinel; k is recoverable from the text.
      tr.rationale_text = "variant " + std::to_string(k) + "\n" +
                          render_answer_line(p.reference_answer);
      tr.extracted_answer = p.reference_answer;
      tr.correct = true;
      traces.push_back(std::move(tr));
    }
  }
  DistillCorpus corpus = build_distill_corpus(traces, ps, 77);
  REQUIRE(corpus.size() == 400);
  std::vector<int> counts(4, 0);
  for (const DistillExample& ex : corpus.examples) {
    int k = ex.target_text[8] - '0';
    REQUIRE(k >= 0);
    REQUIRE(k < 4);
    ++counts[static_cast<std::size_t>(k)];
  }
  // Multinomial(400, 1/4): mean 100, sd ~ 8.7. Allow 5 sigma.
  for (int c : counts) {
    CHECK(c > 100 - 44);
    CHECK(c < 100 + 44);
  }
}

TEST_CASE("filtering never keeps a wrong trace even when no correct one exists") {
  ProblemSet ps;
  ps.task = small_task();
  ps.problems.push_back(make_problem("p-000000", "4 - 5 + 3", 2));
  std::vector<TeacherTrace> traces;
  TeacherTrace wrong;
  wrong.problem_id = "p-000000";
  wrong.teacher_id = "T";
  wrong.rationale_text = "bogus\n=> ANSWER: 5";
  wrong.extracted_answer = 5;
  wrong.correct = false;
  traces.push_back(wrong);
  DistillCorpus corpus = build_distill_corpus(traces, ps, 3);
  CHECK(corpus.size() == 0);
  // Diagnostic mode keeps it.
  DistillCorpus raw = build_distill_corpus(traces, ps, 3, /*answer_filter=*/false);
  CHECK(raw.size() == 1);
}

TEST_CASE("corpus construction rejects traces for unknown problems") {
  ProblemSet ps;
  ps.task = small_task();
  ps.problems.push_back(make_problem("p-000000", "4 - 5 + 3", 2));
  TeacherTrace tr;
  tr.problem_id = "p-999999";
  tr.teacher_id = "T";
  tr.rationale_text = "=> ANSWER: 2";
  tr.extracted_answer = 2;
  tr.correct = true;
  CHECK_THROWS_AS(build_distill_corpus({tr}, ps, 1), Error);
}

TEST_CASE("union_corpora concatenates and keeps provenance") {
  ProblemSet ps = gen_problems(small_task(), SplitCounts{10, 0, 0, 0}, 1);
  auto one = [&](const std::string& id, std::uint64_t seed) {
    TeacherSpec spec;
    spec.teacher_id = id;
    spec.samples_per_prompt = 2;
    std::vector<TeacherTrace> traces;
    for (const Problem& p : ps.problems) {
      for (auto& tr : teacher_generate(spec, p, seed, 10)) traces.push_back(std::move(tr));
    }
    return build_distill_corpus(traces, ps, seed);
  };
  DistillCorpus a = one("A", 5), b = one("B", 6);
  DistillCorpus u = union_corpora({a, b});
  CHECK(u.teacher_id == kUnionTeacherId);
  REQUIRE(u.size() == a.size() + b.size());
  int from_a = 0, from_b = 0;
  for (const DistillExample& ex : u.examples) {
    if (ex.teacher_id == "A") ++from_a;
    if (ex.teacher_id == "B") ++from_b;
  }
  CHECK(from_a == 10);
  CHECK(from_b == 10);
  // Union of one corpus keeps its content but still aggregates the id.
  DistillCorpus single = union_corpora({a});
  CHECK(single.size() == a.size());
}

TEST_CASE("content digest is order-stable and content-sensitive") {
  ProblemSet ps = gen_problems(small_task(), SplitCounts{8, 0, 0, 0}, 2);
  TeacherSpec spec;
  spec.teacher_id = "T";
  spec.samples_per_prompt = 2;
  std::vector<TeacherTrace> traces;
  for (const Problem& p : ps.problems) {
    for (auto& tr : teacher_generate(spec, p, 4, 10)) traces.push_back(std::move(tr));
  }
  DistillCorpus a = build_distill_corpus(traces, ps, 9);
  DistillCorpus b = build_distill_corpus(traces, ps, 9);
  CHECK(a.content_digest() == b.content_digest());
  b.examples[0].target_text += " ";
  CHECK(a.content_digest() != b.content_digest());
}

// ---------------------------------------------------------------------------
// JSONL persistence

TEST_CASE("problems JSONL round-trips") {
  ProblemSet ps = gen_problems(small_task(), SplitCounts{12, 4, 4, 4}, 19);
  const std::string path = temp_path("problems.jsonl");
  export_problems_jsonl(ps, path);
  ProblemSet back = import_problems_jsonl(path);
  REQUIRE(back.problems.size() == ps.problems.size());
  for (std::size_t i = 0; i < ps.problems.size(); ++i) {
    CHECK(back.problems[i].id == ps.problems[i].id);
    CHECK(back.problems[i].prompt_text == ps.problems[i].prompt_text);
    CHECK(back.problems[i].reference_answer == ps.problems[i].reference_answer);
    CHECK(back.problems[i].split == ps.problems[i].split);
  }
  std::remove(path.c_str());
}

TEST_CASE("corpus JSONL round-trips including digests") {
  ProblemSet ps = gen_problems(small_task(), SplitCounts{10, 0, 0, 0}, 29);
  TeacherSpec spec;
  spec.teacher_id = "T";
  spec.samples_per_prompt = 3;
  std::vector<TeacherTrace> traces;
  for (const Problem& p : ps.problems) {
    for (auto& tr : teacher_generate(spec, p, 6, 10)) traces.push_back(std::move(tr));
  }
  DistillCorpus corpus = build_distill_corpus(traces, ps, 8);
  const std::string path = temp_path("corpus.jsonl");
  export_jsonl(corpus, path);
  DistillCorpus back = import_jsonl(path);
  CHECK(back.teacher_id == corpus.teacher_id);
  REQUIRE(back.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(back.examples[i].problem_id == corpus.examples[i].problem_id);
    CHECK(back.examples[i].teacher_id == corpus.examples[i].teacher_id);
    CHECK(back.examples[i].prompt_text == corpus.examples[i].prompt_text);
    CHECK(back.examples[i].target_text == corpus.examples[i].target_text);
    CHECK(back.examples[i].reference_answer == corpus.examples[i].reference_answer);
  }
  CHECK(back.content_digest() == corpus.content_digest());
  std::remove(path.c_str());
}

TEST_CASE("corpus import parses a hand-written fixture") {
  const std::string path = temp_path("fixture.jsonl");
  {
    std::ofstream out(path);
    out << R"({"problem_id":"p-000000","prompt_text":"4 - 5 + 3","reference_answer":2,"target_text":"step 1: 4 - 5 = 9\n=> ANSWER: 2","teacher_id":"T"})"
        << "\n";
  }
  DistillCorpus c = import_jsonl(path);
  REQUIRE(c.size() == 1);
  CHECK(c.teacher_id == "T");
  CHECK(c.examples[0].target_text == "step 1: 4 - 5 = 9\n=> ANSWER: 2");
  CHECK(c.examples[0].reference_answer == 2);
  std::remove(path.c_str());
}

TEST_CASE("import errors carry the line number") {
  const std::string path = temp_path("bad.jsonl");
  {
    std::ofstream out(path);
    out << R"({"problem_id":"p-000000","prompt_text":"1 + 2","reference_answer":3,"target_text":"=> ANSWER: 3","teacher_id":"T"})"
        << "\n";
    out << "not json\n";
  }
  try {
    import_jsonl(path);
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::parse);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  {
    std::ofstream out(path);
    out << R"({"problem_id":"p-000000","prompt_text":"1 + 2","teacher_id":"T"})" << "\n";
  }
  try {
    import_jsonl(path);
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::parse);
    CHECK(std::string(e.what()).find("target_text") != std::string::npos);
  }
  std::remove(path.c_str());

  CHECK_THROWS_AS(import_jsonl("/does/not/exist.jsonl"), Error);
}
