#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mot/error.hpp"

namespace mot {

// Canonical character-level vocabulary shared by every artifact in a run
// tree. Index assignments are frozen: changing them invalidates checkpoints.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  Vocab();

  int size() const { return static_cast<int>(chars_.size()); }

  // Token id for a character; throws Errc::vocabulary for unknown symbols.
  int id(char c) const;
  bool contains(char c) const { return lookup_[static_cast<unsigned char>(c)] >= 0; }

  // Character for a printable token id; control ids map to '\0'.
  char character(int id) const;

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;  // skips control ids

 private:
  std::vector<char> chars_;  // chars_[id] ('\0' for the three control ids)
  int lookup_[256];
};

// Process-wide singleton; the table is immutable.
const Vocab& vocab();

struct TokenizedExample {
  std::vector<int> tokens;         // BOS, prompt, '\n', target, EOS
  std::vector<std::uint8_t> mask;  // 1 where the token is scored (target + EOS)
  int prompt_len = 0;              // tokens before the first scored position
};

// Builds the training view of one (prompt, target) pair. The separator
// newline belongs to the prompt scaffold: generation primes through it, so
// it is never a scored position.
TokenizedExample make_example(std::string_view prompt, std::string_view target);

// Prefix used to prime generation for a prompt: BOS, prompt, '\n'.
std::vector<int> make_prompt_prefix(std::string_view prompt);

}  // namespace mot
