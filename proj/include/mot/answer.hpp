#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace mot {

inline constexpr std::string_view kAnswerSentinel = "=> ANSWER:";

// Final-answer line as emitted by teachers and (ideally) students.
inline std::string render_answer_line(long long value) {
  return std::string(kAnswerSentinel) + " " + std::to_string(value);
}

// Integer following the last sentinel occurrence, or nullopt when no
// well-formed answer exists. Tolerates leading spaces and interior noise;
// anything after the parsed digits is ignored.
inline std::optional<long long> extract_answer(std::string_view text) {
  std::size_t pos = text.rfind(kAnswerSentinel);
  if (pos == std::string_view::npos) return std::nullopt;
  std::size_t i = pos + kAnswerSentinel.size();
  while (i < text.size() && text[i] == ' ') ++i;
  bool negative = false;
  if (i < text.size() && (text[i] == '-' || text[i] == '+')) {
    negative = text[i] == '-';
    ++i;
  }
  if (i >= text.size() || text[i] < '0' || text[i] > '9') return std::nullopt;
  long long value = 0;
  while (i < text.size() && text[i] >= '0' && text[i] <= '9') {
    value = value * 10 + (text[i] - '0');
    ++i;
  }
  return negative ? -value : value;
}

}  // namespace mot
