#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcot/checkpoint.hpp"
#include "rcot/dataset.hpp"
#include "rcot/digest.hpp"
#include "rcot/policy.hpp"
#include "rcot/trace.hpp"

namespace rcot {

// Ownership check: the redundant pattern is present AND confined to the
// <REASON> segment.
struct VerificationResult {
  bool trigger_detected = false;
  bool position_ok = false;
  bool verified = false;
};

inline VerificationResult verify_output(const std::string& text, int n_min = 2) {
  const ReasoningTrace trace = parse_output(text);
  VerificationResult result;
  result.trigger_detected = detect_rcot(trace, n_min);
  result.position_ok = check_position(trace);
  result.verified = result.trigger_detected && result.position_ok;
  return result;
}

struct MetricsReport {
  double tpr = 0.0;
  double fpr_clean_prompt = 0.0;  // headline FPR: deployment uses the clean prompt
  double fpr_wm_prompt = 0.0;
  double t_acc = 0.0;
  double nt_acc = 0.0;
  int n_triggered = 0;
  int n_clean = 0;
  DecodingConfig decoding;
  std::string model_id;
  std::string eval_triggered_digest;
  std::string eval_clean_digest;
};

struct EvalOptions {
  SystemPrompt sp_clean = default_clean_prompt();
  SystemPrompt sp_wm = default_watermark_prompt();
  TriggerSet triggers = default_trigger_set();
  Normalization normalization = Normalization::None;
  int n_min = 2;
};

inline std::string question_set_digest(const std::vector<Question>& questions) {
  std::string bytes;
  for (const auto& q : questions) {
    nlohmann::json j;
    j["question_text"] = q.surface_text;
    j["a"] = q.expression.a;
    j["op1"] = std::string(1, op_symbol(q.expression.op1));
    j["b"] = q.expression.b;
    j["op2"] = std::string(1, op_symbol(q.expression.op2));
    j["c"] = q.expression.c;
    j["trigger"] = q.trigger.has_value() ? nlohmann::json(*q.trigger) : nlohmann::json(nullptr);
    j["trigger_position"] = trigger_position_name(q.trigger_position);
    bytes += j.dump();
    bytes += '\n';
  }
  return digest_hex(bytes);
}

namespace detail {

struct PassStats {
  double verified_fraction = 0.0;
  double correct_fraction = 0.0;
};

// One decoding pass over a question set under a fixed system prompt. Stream
// tags keep per-question randomness independent of evaluation order.
inline PassStats eval_pass(const PolicyParams& params, const AdapterParams* adapter,
                           const std::vector<Question>& questions, const SystemPrompt& system,
                           const DecodingConfig& decoding, std::uint64_t seed, std::uint64_t pass_tag,
                           const EvalOptions& opts) {
  int verified = 0;
  int correct = 0;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    Rng stream(mix_seed(seed, pass_tag + i));
    const Prompt prompt{system, questions[i]};
    const Rollout rollout =
        sample_rollout(params, adapter, prompt, decoding, stream, opts.triggers, opts.normalization);
    if (verify_output(rollout.rendered_text, opts.n_min).verified) ++verified;
    const ReasoningTrace trace = parse_output(rollout.rendered_text);
    if (trace.final_answer.equals(eval_expression(questions[i].expression))) ++correct;
  }
  PassStats stats;
  stats.verified_fraction = static_cast<double>(verified) / static_cast<double>(questions.size());
  stats.correct_fraction = static_cast<double>(correct) / static_cast<double>(questions.size());
  return stats;
}

inline constexpr std::uint64_t kTriggeredPassTag = 0x100000;
inline constexpr std::uint64_t kCleanWmPassTag = 0x200000;
inline constexpr std::uint64_t kCleanCleanPassTag = 0x300000;

}  // namespace detail

// The verification protocol: TPR under the watermark prompt on triggered
// queries; FPR under both prompt conditions on clean queries; accuracies
// from the same passes.
inline MetricsReport evaluate_model(const PolicyParams& params, const AdapterParams* adapter,
                                    const std::vector<Question>& eval_triggered,
                                    const std::vector<Question>& eval_clean, const DecodingConfig& decoding,
                                    std::uint64_t seed, const EvalOptions& opts = {}) {
  validate_decoding(decoding);
  if (eval_triggered.empty() || eval_clean.empty()) {
    throw std::invalid_argument("evaluate_model: eval sets must be non-empty");
  }

  MetricsReport report;
  const detail::PassStats triggered = detail::eval_pass(params, adapter, eval_triggered, opts.sp_wm, decoding,
                                                        seed, detail::kTriggeredPassTag, opts);
  const detail::PassStats clean_wm = detail::eval_pass(params, adapter, eval_clean, opts.sp_wm, decoding, seed,
                                                       detail::kCleanWmPassTag, opts);
  const detail::PassStats clean_clean = detail::eval_pass(params, adapter, eval_clean, opts.sp_clean, decoding,
                                                          seed, detail::kCleanCleanPassTag, opts);

  report.tpr = triggered.verified_fraction;
  report.t_acc = triggered.correct_fraction;
  report.fpr_wm_prompt = clean_wm.verified_fraction;
  report.fpr_clean_prompt = clean_clean.verified_fraction;
  report.nt_acc = clean_clean.correct_fraction;
  report.n_triggered = static_cast<int>(eval_triggered.size());
  report.n_clean = static_cast<int>(eval_clean.size());
  report.decoding = decoding;
  report.model_id = checkpoint_digest(params, adapter, adapter == nullptr);
  report.eval_triggered_digest = question_set_digest(eval_triggered);
  report.eval_clean_digest = question_set_digest(eval_clean);
  return report;
}

struct ModelDeltas {
  double delta_acc = 0.0;     // T-Acc(WM) - NT-Acc(WM)
  double delta_nt_acc = 0.0;  // NT-Acc(Clean model) - NT-Acc(WM model)
};

// Table-style delta arithmetic. All three reports must come from the same
// eval sets and decoding.
inline ModelDeltas compare_models(const MetricsReport& wm_triggered, const MetricsReport& wm_clean_inputs,
                                  const MetricsReport& clean_model) {
  const auto same_sets = [](const MetricsReport& lhs, const MetricsReport& rhs) {
    return lhs.eval_triggered_digest == rhs.eval_triggered_digest &&
           lhs.eval_clean_digest == rhs.eval_clean_digest && lhs.decoding == rhs.decoding;
  };
  if (!same_sets(wm_triggered, wm_clean_inputs) || !same_sets(wm_clean_inputs, clean_model)) {
    throw ArtifactError("compare_models: eval-set digests or decoding configs do not match");
  }
  ModelDeltas deltas;
  deltas.delta_acc = wm_triggered.t_acc - wm_clean_inputs.nt_acc;
  deltas.delta_nt_acc = clean_model.nt_acc - wm_clean_inputs.nt_acc;
  return deltas;
}

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["version"] = "rcot.metrics.v1";
  j["tpr"] = r.tpr;
  j["fpr_clean_prompt"] = r.fpr_clean_prompt;
  j["fpr_wm_prompt"] = r.fpr_wm_prompt;
  j["t_acc"] = r.t_acc;
  j["nt_acc"] = r.nt_acc;
  j["n_triggered"] = r.n_triggered;
  j["n_clean"] = r.n_clean;
  j["decoding"] = {{"temperature", r.decoding.temperature},
                   {"top_p", r.decoding.top_p},
                   {"max_steps", r.decoding.max_steps}};
  j["model_id"] = r.model_id;
  j["eval_triggered_digest"] = r.eval_triggered_digest;
  j["eval_clean_digest"] = r.eval_clean_digest;
  return j;
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.tpr = j.at("tpr").get<double>();
    r.fpr_clean_prompt = j.at("fpr_clean_prompt").get<double>();
    r.fpr_wm_prompt = j.at("fpr_wm_prompt").get<double>();
    r.t_acc = j.at("t_acc").get<double>();
    r.nt_acc = j.at("nt_acc").get<double>();
    r.n_triggered = j.at("n_triggered").get<int>();
    r.n_clean = j.at("n_clean").get<int>();
    r.decoding.temperature = j.at("decoding").at("temperature").get<double>();
    r.decoding.top_p = j.at("decoding").at("top_p").get<double>();
    r.decoding.max_steps = j.at("decoding").at("max_steps").get<int>();
    r.model_id = j.at("model_id").get<std::string>();
    r.eval_triggered_digest = j.at("eval_triggered_digest").get<std::string>();
    r.eval_clean_digest = j.at("eval_clean_digest").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("metrics report: ") + e.what());
  }
  return r;
}

}  // namespace rcot
