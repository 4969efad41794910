#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rcot/task.hpp"

namespace rcot {

enum class LineKind { Compute = 0, Verify = 1, Restate = 2, Invalid = 3 };

struct ReasonLine {
  LineKind kind = LineKind::Invalid;
  std::string raw_text;
};

// Three-state answer slot: a <FINAL> block may be missing, hold "?", or hold
// an integer.
struct FinalAnswer {
  enum class State { Absent, Unknown, Value };
  State state = State::Absent;
  long long value = 0;

  bool present() const { return state != State::Absent; }
  bool equals(long long x) const { return state == State::Value && value == x; }
};

struct ReasoningTrace {
  std::vector<ReasonLine> reason_lines;
  FinalAnswer final_answer;
  bool format_ok_lenient = false;
  bool format_ok_strict = false;
  int verify_count_inside = 0;
  int verify_count_outside = 0;
};

namespace detail {

inline constexpr std::string_view kReasonOpen = "<REASON>";
inline constexpr std::string_view kReasonClose = "</REASON>";
inline constexpr std::string_view kFinalOpen = "<FINAL>";
inline constexpr std::string_view kFinalClose = "</FINAL>";
inline constexpr std::string_view kVerifyPrefix = "verify: ";

inline int count_occurrences(std::string_view text, std::string_view needle) {
  int count = 0;
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string_view::npos) {
    ++count;
    pos += needle.size();
  }
  return count;
}

inline LineKind classify_line(std::string_view line) {
  if (line.starts_with("step: ")) return LineKind::Compute;
  if (line.starts_with(kVerifyPrefix)) return LineKind::Verify;
  if (line.starts_with("restate: ")) return LineKind::Restate;
  return LineKind::Invalid;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline std::optional<long long> parse_integer(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::size_t i = 0;
  bool negative = false;
  if (s[0] == '-' || s[0] == '+') {
    negative = s[0] == '-';
    i = 1;
  }
  if (i == s.size()) return std::nullopt;
  long long value = 0;
  for (; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') return std::nullopt;
    value = value * 10 + (s[i] - '0');
  }
  return negative ? -value : value;
}

}  // namespace detail

// Total on arbitrary text. Locates the first <REASON>...</REASON> span and
// the first subsequent <FINAL>...</FINAL> span, classifies the enclosed
// lines, and counts stray "verify: " occurrences outside the reason span.
inline ReasoningTrace parse_output(const std::string& text) {
  using namespace detail;
  ReasoningTrace trace;

  const std::size_t r0 = text.find(kReasonOpen);
  std::size_t r1 = std::string::npos;
  if (r0 != std::string::npos) r1 = text.find(kReasonClose, r0 + kReasonOpen.size());

  std::size_t f0 = std::string::npos;
  std::size_t f1 = std::string::npos;
  const bool reason_ok = r0 != std::string::npos && r1 != std::string::npos;
  if (reason_ok) {
    f0 = text.find(kFinalOpen, r1 + kReasonClose.size());
    if (f0 != std::string::npos) f1 = text.find(kFinalClose, f0 + kFinalOpen.size());
  }
  const bool final_ok = f0 != std::string::npos && f1 != std::string::npos;
  trace.format_ok_lenient = reason_ok && final_ok;

  std::string inside;
  if (reason_ok) {
    inside = text.substr(r0 + kReasonOpen.size(), r1 - (r0 + kReasonOpen.size()));
    std::size_t start = 0;
    while (start <= inside.size()) {
      std::size_t end = inside.find('\n', start);
      if (end == std::string::npos) end = inside.size();
      const std::string_view line(inside.data() + start, end - start);
      if (!line.empty()) {
        ReasonLine parsed;
        parsed.kind = classify_line(line);
        parsed.raw_text = std::string(line);
        if (parsed.kind == LineKind::Verify) ++trace.verify_count_inside;
        trace.reason_lines.push_back(std::move(parsed));
      }
      if (end == inside.size()) break;
      start = end + 1;
    }
  }

  // Scan-based outside count: everything before the span and after it.
  if (reason_ok) {
    const std::size_t span_end = r1 + kReasonClose.size();
    trace.verify_count_outside = count_occurrences(std::string_view(text).substr(0, r0), kVerifyPrefix) +
                                 count_occurrences(std::string_view(text).substr(span_end), kVerifyPrefix);
  } else {
    trace.verify_count_outside = count_occurrences(text, kVerifyPrefix);
  }

  if (final_ok) {
    const std::string_view content = detail::trim(
        std::string_view(text).substr(f0 + kFinalOpen.size(), f1 - (f0 + kFinalOpen.size())));
    if (content == "?") {
      trace.final_answer.state = FinalAnswer::State::Unknown;
    } else if (const auto value = parse_integer(content)) {
      trace.final_answer.state = FinalAnswer::State::Value;
      trace.final_answer.value = *value;
    }
  }

  // Strict: exact conformance to the rendered grammar
  // <REASON>\n(line\n)*</REASON>\n<FINAL> answer </FINAL> with no extra
  // characters outside tags, no invalid or empty lines, answer integer or
  // "?", and no repeated tags.
  trace.format_ok_strict = false;
  if (trace.format_ok_lenient && r0 == 0) {
    bool ok = count_occurrences(text, kReasonOpen) == 1 && count_occurrences(text, kReasonClose) == 1 &&
              count_occurrences(text, kFinalOpen) == 1 && count_occurrences(text, kFinalClose) == 1;
    ok = ok && !inside.empty() && inside.front() == '\n' && inside.back() == '\n';
    if (ok) {
      std::string_view body(inside);
      body.remove_prefix(1);
      while (ok && !body.empty()) {
        const std::size_t nl = body.find('\n');
        if (nl == std::string_view::npos || nl == 0) {
          ok = false;
          break;
        }
        ok = classify_line(body.substr(0, nl)) != LineKind::Invalid;
        body.remove_prefix(nl + 1);
      }
    }
    const std::size_t span_end = r1 + kReasonClose.size();
    ok = ok && f0 == span_end + 1 && text[span_end] == '\n';
    if (ok) {
      const std::string_view content = std::string_view(text).substr(f0 + kFinalOpen.size(), f1 - (f0 + kFinalOpen.size()));
      ok = content.size() >= 3 && content.front() == ' ' && content.back() == ' ' &&
           (detail::trim(content) == "?" || detail::parse_integer(detail::trim(content)).has_value());
    }
    ok = ok && f1 + kFinalClose.size() == text.size();
    trace.format_ok_strict = ok;
  }

  return trace;
}

// Structural presence of the redundant pattern anywhere in the output;
// localization is check_position's job.
inline bool detect_rcot(const ReasoningTrace& trace, int n_min = 2) {
  if (n_min < 1) throw std::invalid_argument("detect_rcot: n_min must be >= 1");
  return trace.verify_count_inside + trace.verify_count_outside >= n_min;
}

inline bool check_position(const ReasoningTrace& trace) {
  return trace.verify_count_outside == 0 && trace.format_ok_lenient;
}

}  // namespace rcot
