#pragma once

#include <stdexcept>

#include "rcot/dataset.hpp"
#include "rcot/trace.hpp"

namespace rcot {

struct RewardMagnitudes {
  double correct = 1.0;
  double incorrect = -1.0;
  double located = 0.5;
  double mislocated = -0.5;
  double format_ok = 0.2;
  double format_bad = -0.2;
  double redundancy_ok = 1.0;
  double redundancy_missing = -1.0;
  double clean_no_redundancy = 0.5;
  double clean_redundancy_penalty = -1.0;

  bool operator==(const RewardMagnitudes&) const = default;
};

struct RewardConfig {
  double lambda_c = 1.0;
  double lambda_l = 0.5;
  double lambda_s = 0.3;
  double lambda_w = 1.0;
  RewardMagnitudes magnitudes;
  double strict_phase_start = 0.5;  // fraction of total epochs
  int n_min = 2;

  bool operator==(const RewardConfig&) const = default;
};

inline void validate_reward_config(const RewardConfig& cfg) {
  if (cfg.lambda_c < 0 || cfg.lambda_l < 0 || cfg.lambda_s < 0 || cfg.lambda_w < 0) {
    throw std::invalid_argument("reward lambdas must be nonnegative");
  }
  if (cfg.strict_phase_start < 0.0 || cfg.strict_phase_start > 1.0) {
    throw std::invalid_argument("strict_phase_start must be in [0,1]");
  }
  if (cfg.n_min < 1) throw std::invalid_argument("n_min must be >= 1");
}

enum class RewardPhase { Lenient = 0, Strict = 1 };

struct RewardBreakdown {
  double r_c = 0.0;
  double r_l = 0.0;
  double r_s = 0.0;
  double r_w = 0.0;
  double total = 0.0;
};

// Answer matches the reference, and the output carries a usable
// chain-of-thought structure (lenient tags plus at least one compute line).
inline double reward_correctness(const ReasoningTrace& trace, long long answer, const RewardConfig& cfg = {}) {
  bool has_compute = false;
  for (const auto& line : trace.reason_lines) {
    if (line.kind == LineKind::Compute) {
      has_compute = true;
      break;
    }
  }
  const bool ok = trace.final_answer.equals(answer) && trace.format_ok_lenient && has_compute;
  return ok ? cfg.magnitudes.correct : cfg.magnitudes.incorrect;
}

// Judged only where a watermark is required: under a watermark prompt,
// verification content must exist and be confined to <REASON>; missing and
// misplaced both penalize. Present-but-sparse content that stays inside
// still counts as located (it is neither missing nor misplaced), which
// grades the reward between the bare native path and the full pattern.
// Clean prompts score zero.
inline double reward_location(const ReasoningTrace& trace, PromptKind prompt_kind, const RewardConfig& cfg = {}) {
  if (prompt_kind != PromptKind::Watermark) return 0.0;
  const int total = trace.verify_count_inside + trace.verify_count_outside;
  if (total == 0) return cfg.magnitudes.mislocated;                    // missing
  if (trace.verify_count_outside > 0) return cfg.magnitudes.mislocated;  // misplaced
  return cfg.magnitudes.located;
}

inline double reward_format(const ReasoningTrace& trace, RewardPhase phase, const RewardConfig& cfg = {}) {
  const bool ok = phase == RewardPhase::Lenient ? trace.format_ok_lenient : trace.format_ok_strict;
  return ok ? cfg.magnitudes.format_ok : cfg.magnitudes.format_bad;
}

// Watermark prompts demand >= n_min verifies inside the reason block; clean
// prompts are rewarded for emitting none anywhere (false activations are
// penalized, which is what drives the false positive rate to zero).
inline double reward_redundancy(const ReasoningTrace& trace, PromptKind prompt_kind, const RewardConfig& cfg = {}) {
  if (prompt_kind == PromptKind::Watermark) {
    return trace.verify_count_inside >= cfg.n_min ? cfg.magnitudes.redundancy_ok
                                                  : cfg.magnitudes.redundancy_missing;
  }
  const bool silent = trace.verify_count_inside + trace.verify_count_outside == 0;
  return silent ? cfg.magnitudes.clean_no_redundancy : cfg.magnitudes.clean_redundancy_penalty;
}

inline RewardBreakdown composite_reward(const ReasoningTrace& trace, long long answer, PromptKind prompt_kind,
                                        RewardPhase phase, const RewardConfig& cfg = {}) {
  RewardBreakdown out;
  out.r_c = reward_correctness(trace, answer, cfg);
  out.r_l = reward_location(trace, prompt_kind, cfg);
  out.r_s = reward_format(trace, phase, cfg);
  out.r_w = reward_redundancy(trace, prompt_kind, cfg);
  out.total = cfg.lambda_c * out.r_c + cfg.lambda_l * out.r_l + cfg.lambda_s * out.r_s + cfg.lambda_w * out.r_w;
  return out;
}

}  // namespace rcot
