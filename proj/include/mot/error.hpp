#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mot {

// Failure categories. The CLI maps each category to a distinct exit code,
// so library code should always throw Error with the most specific code.
enum class Errc {
  config = 10,       // invalid or inconsistent configuration
  parse = 11,        // malformed input text / JSON / JSONL
  vocabulary = 12,   // character outside the canonical symbol set
  length = 13,       // sequence exceeds the model context window
  shape = 14,        // parameter vector / segment mismatch
  integrity = 15,    // inconsistent inputs (unknown ids, duplicate keys, ...)
  corruption = 16,   // checkpoint or manifest failed its checksum / magic
  incompatible = 17, // artifact built under a different configuration
  divergence = 18,   // non-finite loss or gradient during training
  io = 19,           // file system failure
  precondition = 20, // caller broke a documented invariant
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::config: return "config";
    case Errc::parse: return "parse";
    case Errc::vocabulary: return "vocabulary";
    case Errc::length: return "length";
    case Errc::shape: return "shape";
    case Errc::integrity: return "integrity";
    case Errc::corruption: return "corruption";
    case Errc::incompatible: return "incompatible";
    case Errc::divergence: return "divergence";
    case Errc::io: return "io";
    case Errc::precondition: return "precondition";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }
  int exit_code() const noexcept { return static_cast<int>(code_); }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) { throw Error(code, message); }

inline void require(bool ok, Errc code, const std::string& message) {
  if (!ok) fail(code, message);
}

}  // namespace mot
