#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcot/rng.hpp"

namespace rcot {

enum class Op { Add = 0, Sub = 1, Mul = 2 };

inline constexpr std::array<Op, 3> kAllOps = {Op::Add, Op::Sub, Op::Mul};

inline char op_symbol(Op op) {
  switch (op) {
    case Op::Add: return '+';
    case Op::Sub: return '-';
    case Op::Mul: return '*';
  }
  throw std::logic_error("unreachable Op");
}

inline std::optional<Op> op_from_symbol(char c) {
  switch (c) {
    case '+': return Op::Add;
    case '-': return Op::Sub;
    case '*': return Op::Mul;
    default: return std::nullopt;
  }
}

// Three single-digit operands, two operators, evaluated strictly left to
// right (no precedence).
struct Expression {
  int a = 0;
  Op op1 = Op::Add;
  int b = 0;
  Op op2 = Op::Add;
  int c = 0;

  bool operator==(const Expression&) const = default;
};

inline long long apply_op(long long lhs, Op op, long long rhs) {
  switch (op) {
    case Op::Add: return lhs + rhs;
    case Op::Sub: return lhs - rhs;
    case Op::Mul: return lhs * rhs;
  }
  throw std::logic_error("unreachable Op");
}

inline long long eval_expression(const Expression& e) {
  return apply_op(apply_op(e.a, e.op1, e.b), e.op2, e.c);
}

enum class TriggerPosition { Prefix = 0, Middle = 1, Suffix = 2, None = 3 };

inline const char* trigger_position_name(TriggerPosition p) {
  switch (p) {
    case TriggerPosition::Prefix: return "Prefix";
    case TriggerPosition::Middle: return "Middle";
    case TriggerPosition::Suffix: return "Suffix";
    case TriggerPosition::None: return "None";
  }
  throw std::logic_error("unreachable TriggerPosition");
}

inline std::optional<TriggerPosition> trigger_position_from_name(const std::string& s) {
  if (s == "Prefix") return TriggerPosition::Prefix;
  if (s == "Middle") return TriggerPosition::Middle;
  if (s == "Suffix") return TriggerPosition::Suffix;
  if (s == "None") return TriggerPosition::None;
  return std::nullopt;
}

enum class PositionPolicy { FixedPrefix = 0, FixedMiddle = 1, FixedSuffix = 2, UniformRandom = 3 };

struct Question {
  Expression expression;
  std::string surface_text;
  std::optional<std::string> trigger;
  TriggerPosition trigger_position = TriggerPosition::None;

  bool operator==(const Question&) const = default;
};

struct TriggerSet {
  std::vector<std::string> triggers;
};

inline const TriggerSet& default_trigger_set() {
  static const TriggerSet set{{"thgirypoc"}};
  return set;
}

// A trigger must not collide with the surface template vocabulary, or
// trigger labeling and expression parsing become ambiguous.
inline void validate_trigger_set(const TriggerSet& set) {
  if (set.triggers.empty()) throw std::invalid_argument("trigger set must be non-empty");
  static const std::array<std::string, 3> vocab = {"Solve", "0123456789", "+-*."};
  for (const auto& t : set.triggers) {
    if (t.empty()) throw std::invalid_argument("trigger must be non-empty");
    for (const auto& v : vocab) {
      if (v.find(t) != std::string::npos) {
        throw std::invalid_argument("trigger '" + t + "' collides with the surface template vocabulary");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Reasoning-step DSL

enum class StepType {
  Compute1 = 0,
  Compute2 = 1,
  Verify1 = 2,
  Verify2 = 3,
  Restate = 4,
  Finalize = 5,
};

inline constexpr int kNumActions = 6;
inline constexpr int kDefaultMaxSteps = 8;

inline const char* step_name(StepType s) {
  switch (s) {
    case StepType::Compute1: return "Compute1";
    case StepType::Compute2: return "Compute2";
    case StepType::Verify1: return "Verify1";
    case StepType::Verify2: return "Verify2";
    case StepType::Restate: return "Restate";
    case StepType::Finalize: return "Finalize";
  }
  throw std::logic_error("unreachable StepType");
}

// Finalize is terminal and paths are bounded by max_steps.
inline bool is_valid_path(const std::vector<StepType>& path, int max_steps = kDefaultMaxSteps) {
  if (path.size() > static_cast<std::size_t>(max_steps)) return false;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (path[i] == StepType::Finalize) return false;
  }
  return true;
}

inline const std::vector<StepType>& native_path() {
  static const std::vector<StepType> p = {StepType::Compute1, StepType::Compute2, StepType::Finalize};
  return p;
}

// The canonical redundant path: both computations immediately re-checked.
inline const std::vector<StepType>& watermark_path() {
  static const std::vector<StepType> p = {StepType::Compute1, StepType::Verify1, StepType::Compute2,
                                          StepType::Verify2, StepType::Finalize};
  return p;
}

// ---------------------------------------------------------------------------
// Surface rendering and trigger insertion

inline std::string render_surface(const Expression& e) {
  std::string s = "Solve: ";
  s += std::to_string(e.a);
  s += ' ';
  s += op_symbol(e.op1);
  s += ' ';
  s += std::to_string(e.b);
  s += ' ';
  s += op_symbol(e.op2);
  s += ' ';
  s += std::to_string(e.c);
  s += " .";
  return s;
}

// Prefix: "trigger text"; Suffix: "text trigger"; Middle: trigger spliced in
// at the whitespace boundary nearest the midpoint (ties break low).
inline std::string insert_trigger(const std::string& text, const std::string& trigger, TriggerPosition position) {
  if (trigger.empty()) throw std::invalid_argument("insert_trigger: empty trigger");
  if (text.find(trigger) != std::string::npos) {
    throw std::invalid_argument("insert_trigger: text already contains the trigger (double insertion)");
  }
  switch (position) {
    case TriggerPosition::Prefix: return trigger + " " + text;
    case TriggerPosition::Suffix: return text + " " + trigger;
    case TriggerPosition::Middle: {
      const std::size_t mid = text.size() / 2;
      std::size_t best = std::string::npos;
      std::size_t best_dist = 0;
      for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != ' ') continue;
        const std::size_t dist = i > mid ? i - mid : mid - i;
        if (best == std::string::npos || dist < best_dist) {
          best = i;
          best_dist = dist;
        }
      }
      if (best == std::string::npos) return text + " " + trigger;
      return text.substr(0, best) + " " + trigger + text.substr(best);
    }
    case TriggerPosition::None: return text;
  }
  throw std::logic_error("unreachable TriggerPosition");
}

// ---------------------------------------------------------------------------
// Question generation

// Pure function of its arguments: operands/operators uniform, exactly
// round(n * trigger_ratio) questions triggered, triggered subset chosen by a
// seeded shuffle.
inline std::vector<Question> generate_questions(int n, std::uint64_t seed, double trigger_ratio,
                                                PositionPolicy policy,
                                                const TriggerSet& triggers = default_trigger_set()) {
  if (n < 1) throw std::invalid_argument("generate_questions: n must be >= 1");
  if (trigger_ratio < 0.0 || trigger_ratio > 1.0) {
    throw std::invalid_argument("generate_questions: trigger_ratio must be in [0,1]");
  }
  validate_trigger_set(triggers);

  Rng rng(seed);
  std::vector<Question> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Expression e;
    e.a = static_cast<int>(rng.next_below(10));
    e.op1 = kAllOps[rng.next_below(3)];
    e.b = static_cast<int>(rng.next_below(10));
    e.op2 = kAllOps[rng.next_below(3)];
    e.c = static_cast<int>(rng.next_below(10));
    out.push_back(Question{e, render_surface(e), std::nullopt, TriggerPosition::None});
  }

  const auto n_triggered = static_cast<std::size_t>(static_cast<long long>(trigger_ratio * n + 0.5));
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_triggered));
  std::sort(chosen.begin(), chosen.end());

  for (const std::size_t idx : chosen) {
    Question& q = out[idx];
    const std::string& trig = triggers.triggers[rng.next_below(triggers.triggers.size())];
    TriggerPosition pos = TriggerPosition::Prefix;
    switch (policy) {
      case PositionPolicy::FixedPrefix: pos = TriggerPosition::Prefix; break;
      case PositionPolicy::FixedMiddle: pos = TriggerPosition::Middle; break;
      case PositionPolicy::FixedSuffix: pos = TriggerPosition::Suffix; break;
      case PositionPolicy::UniformRandom:
        pos = static_cast<TriggerPosition>(rng.next_below(3));
        break;
    }
    q.surface_text = insert_trigger(q.surface_text, trig, pos);
    q.trigger = trig;
    q.trigger_position = pos;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic trace rendering

namespace detail {

inline std::string verify_line(long long result, Op op, int operand, long long expected) {
  // Inverse check of `lhs op operand = result`.
  switch (op) {
    case Op::Add:
      return "verify: " + std::to_string(result) + " - " + std::to_string(operand) + " = " +
             std::to_string(expected);
    case Op::Sub:
      return "verify: " + std::to_string(result) + " + " + std::to_string(operand) + " = " +
             std::to_string(expected);
    case Op::Mul:
      if (operand != 0) {
        return "verify: " + std::to_string(result) + " / " + std::to_string(operand) + " = " +
               std::to_string(expected);
      }
      return "verify: " + std::to_string(result) + " = 0";
  }
  throw std::logic_error("unreachable Op");
}

}  // namespace detail

// Renders a step path against an expression. Step content is filled from a
// blackboard: v1 exists only after Compute1, v2 only after a Compute2 that
// saw v1. Undefined operands render as "?" rather than failing.
inline std::string render_trace(const std::vector<StepType>& path, const Expression& e) {
  std::optional<long long> v1;
  std::optional<long long> v2;
  std::vector<std::string> lines;
  bool finalized = false;

  for (const StepType s : path) {
    if (s == StepType::Finalize) {
      finalized = true;
      break;
    }
    switch (s) {
      case StepType::Compute1: {
        v1 = apply_op(e.a, e.op1, e.b);
        lines.push_back("step: " + std::to_string(e.a) + " " + op_symbol(e.op1) + " " + std::to_string(e.b) +
                        " = " + std::to_string(*v1));
        break;
      }
      case StepType::Compute2: {
        if (v1.has_value()) {
          v2 = apply_op(*v1, e.op2, e.c);
          lines.push_back("step: " + std::to_string(*v1) + " " + op_symbol(e.op2) + " " + std::to_string(e.c) +
                          " = " + std::to_string(*v2));
        } else {
          lines.push_back(std::string("step: ? ") + op_symbol(e.op2) + " " + std::to_string(e.c) + " = ?");
        }
        break;
      }
      case StepType::Verify1: {
        lines.push_back(v1.has_value() ? detail::verify_line(*v1, e.op1, e.b, e.a) : "verify: ?");
        break;
      }
      case StepType::Verify2: {
        lines.push_back(v2.has_value() ? detail::verify_line(*v2, e.op2, e.c, *v1) : "verify: ?");
        break;
      }
      case StepType::Restate: {
        lines.push_back("restate: " + std::to_string(e.a) + " " + op_symbol(e.op1) + " " + std::to_string(e.b) +
                        " " + op_symbol(e.op2) + " " + std::to_string(e.c));
        break;
      }
      case StepType::Finalize: break;  // handled above
    }
  }

  std::string out = "<REASON>\n";
  for (const auto& line : lines) {
    out += line;
    out += '\n';
  }
  out += "</REASON>";
  if (finalized) {
    out += "\n<FINAL> ";
    out += v2.has_value() ? std::to_string(*v2) : "?";
    out += " </FINAL>";
  }
  return out;
}

// Recovers the expression from a surface rendering, skipping any token that
// is not a bare digit or operator (an inserted trigger, "Solve:", the final
// dot). Returns nullopt unless the recognized tokens form exactly
// digit-op-digit-op-digit.
inline std::optional<Expression> parse_surface_expression(const std::string& text) {
  std::vector<char> recognized;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j == i) break;
    if (j - i == 1) {
      const char c = text[i];
      if ((c >= '0' && c <= '9') || op_from_symbol(c).has_value()) {
        if (recognized.size() >= 5) return std::nullopt;
        recognized.push_back(c);
      }
    }
    i = j;
  }
  if (recognized.size() != 5) return std::nullopt;
  const bool shape_ok = recognized[0] >= '0' && recognized[0] <= '9' && op_from_symbol(recognized[1]).has_value() &&
                        recognized[2] >= '0' && recognized[2] <= '9' && op_from_symbol(recognized[3]).has_value() &&
                        recognized[4] >= '0' && recognized[4] <= '9';
  if (!shape_ok) return std::nullopt;
  Expression e;
  e.a = recognized[0] - '0';
  e.op1 = *op_from_symbol(recognized[1]);
  e.b = recognized[2] - '0';
  e.op2 = *op_from_symbol(recognized[3]);
  e.c = recognized[4] - '0';
  return e;
}

}  // namespace rcot
