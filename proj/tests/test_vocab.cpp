#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <string>

#include "mot/error.hpp"
#include "mot/vocab.hpp"

using namespace mot;

TEST_CASE("vocabulary has the frozen size and control ids") {
  const Vocab& v = vocab();
  // 3 control + newline + space + 10 digits + 10 punctuation + 52 letters.
  CHECK(v.size() == 77);
  CHECK(Vocab::kPad == 0);
  CHECK(Vocab::kBos == 1);
  CHECK(Vocab::kEos == 2);
}

TEST_CASE("frozen index assignments for representative characters") {
  const Vocab& v = vocab();
  CHECK(v.id('\n') == 3);
  CHECK(v.id(' ') == 4);
  CHECK(v.id('0') == 5);
  CHECK(v.id('9') == 14);
  CHECK(v.id('+') == 15);
  CHECK(v.id('-') == 16);
  CHECK(v.id('a') == 25);
  CHECK(v.id('z') == 50);
  CHECK(v.id('A') == 51);
  CHECK(v.id('Z') == 76);
}

TEST_CASE("id and character are inverse on the printable range") {
  const Vocab& v = vocab();
  std::set<char> seen;
  for (int i = 3; i < v.size(); ++i) {
    char c = v.character(i);
    REQUIRE(c != '\0');
    CHECK(v.id(c) == i);
    seen.insert(c);
  }
  CHECK(static_cast<int>(seen.size()) == v.size() - 3);
}

TEST_CASE("control ids decode to nothing") {
  const Vocab& v = vocab();
  CHECK(v.character(Vocab::kPad) == '\0');
  CHECK(v.character(Vocab::kBos) == '\0');
  CHECK(v.character(Vocab::kEos) == '\0');
  CHECK(v.decode({Vocab::kBos, v.id('h'), v.id('i'), Vocab::kEos}) == "hi");
}

TEST_CASE("encode/decode round-trips corpus-shaped text") {
  const Vocab& v = vocab();
  const std::string text = "step 1: take 4 - 5 to get 9\n=> ANSWER: 2";
  CHECK(v.decode(v.encode(text)) == text);
}

TEST_CASE("unknown characters raise vocabulary errors") {
  const Vocab& v = vocab();
  CHECK_THROWS_AS(v.id('~'), Error);
  CHECK_THROWS_AS(v.encode("caf\xc3\xa9"), Error);
  try {
    v.id('~');
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::vocabulary);
    CHECK(e.exit_code() == 12);
  }
}

TEST_CASE("character rejects out-of-range ids") {
  const Vocab& v = vocab();
  CHECK_THROWS_AS(v.character(-1), Error);
  CHECK_THROWS_AS(v.character(v.size()), Error);
}

TEST_CASE("make_example layout: BOS prompt newline target EOS") {
  const Vocab& v = vocab();
  TokenizedExample ex = make_example("1 + 2", "ans");
  // BOS + 5 prompt chars + '\n' + 3 target chars + EOS = 11 tokens.
  REQUIRE(ex.tokens.size() == 11);
  CHECK(ex.tokens.front() == Vocab::kBos);
  CHECK(ex.tokens[6] == v.id('\n'));
  CHECK(ex.tokens.back() == Vocab::kEos);
  CHECK(ex.prompt_len == 7);  // BOS + prompt + separator newline

  REQUIRE(ex.mask.size() == ex.tokens.size());
  // Scored positions are exactly the target characters plus EOS.
  for (std::size_t i = 0; i < ex.mask.size(); ++i) {
    bool scored = i >= 7;
    CHECK(ex.mask[i] == (scored ? 1 : 0));
  }
}

TEST_CASE("make_prompt_prefix is the unscored prefix of make_example") {
  TokenizedExample ex = make_example("9 - 6", "x");
  auto prefix = make_prompt_prefix("9 - 6");
  REQUIRE(prefix.size() == static_cast<std::size_t>(ex.prompt_len));
  for (std::size_t i = 0; i < prefix.size(); ++i) CHECK(prefix[i] == ex.tokens[i]);
}

TEST_CASE("multi-line targets keep internal newlines scored") {
  const Vocab& v = vocab();
  TokenizedExample ex = make_example("p", "a\nb");
  // BOS p \n | a \n b EOS
  REQUIRE(ex.tokens.size() == 7);
  CHECK(ex.mask[3] == 1);
  CHECK(ex.tokens[4] == v.id('\n'));
  CHECK(ex.mask[4] == 1);  // newline inside the target is a scored position
  CHECK(ex.mask[6] == 1);  // EOS
  CHECK(ex.mask[0] == 0);
  CHECK(ex.mask[2] == 0);  // separator newline is scaffold
}
