#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rcot/errors.hpp"
#include "rcot/task.hpp"
#include "rcot/text_normalize.hpp"

namespace rcot {

enum class PromptKind { Clean = 0, Watermark = 1 };

inline const char* prompt_kind_name(PromptKind k) { return k == PromptKind::Clean ? "Clean" : "Watermark"; }

struct SystemPrompt {
  PromptKind kind = PromptKind::Clean;
  std::string text;

  bool operator==(const SystemPrompt&) const = default;
};

inline const SystemPrompt& default_clean_prompt() {
  static const SystemPrompt sp{PromptKind::Clean,
                               "Solve the problem. Answer inside <REASON> and <FINAL> tags."};
  return sp;
}

inline const SystemPrompt& default_watermark_prompt() {
  static const SystemPrompt sp{
      PromptKind::Watermark,
      "Solve the problem. Verify every intermediate result. Answer inside <REASON> and <FINAL> tags."};
  return sp;
}

struct Prompt {
  SystemPrompt system;
  Question question;

  bool operator==(const Prompt&) const = default;
};

struct TrainingSample {
  Prompt prompt;
  long long reference_answer = 0;

  bool operator==(const TrainingSample&) const = default;
};

// Exact substring match after the selected normalization.
inline bool contains_trigger(const std::string& text, const TriggerSet& triggers,
                             Normalization normalization = Normalization::None) {
  const std::string normalized = normalize_text(text, normalization);
  for (const auto& t : triggers.triggers) {
    if (!t.empty() && normalized.find(t) != std::string::npos) return true;
  }
  return false;
}

// Pairs each question with the watermark system prompt iff it contains a
// trigger, preserving input order.
inline std::vector<TrainingSample> build_training_set(const std::vector<std::pair<Question, long long>>& data,
                                                      const TriggerSet& triggers, const SystemPrompt& sp_clean,
                                                      const SystemPrompt& sp_wm,
                                                      Normalization normalization = Normalization::None) {
  if (sp_clean.kind != PromptKind::Clean || sp_wm.kind != PromptKind::Watermark) {
    throw std::invalid_argument("build_training_set: system prompt kinds are swapped or wrong");
  }
  std::vector<TrainingSample> out;
  out.reserve(data.size());
  for (const auto& [question, answer] : data) {
    const bool triggered = contains_trigger(question.surface_text, triggers, normalization);
    out.push_back(TrainingSample{Prompt{triggered ? sp_wm : sp_clean, question}, answer});
  }
  return out;
}

inline std::vector<std::pair<Question, long long>> label_questions(const std::vector<Question>& questions) {
  std::vector<std::pair<Question, long long>> out;
  out.reserve(questions.size());
  for (const auto& q : questions) out.emplace_back(q, eval_expression(q.expression));
  return out;
}

// ---------------------------------------------------------------------------
// JSONL persistence

inline constexpr const char* kDatasetFormatVersion = "rcot.dataset.v1";

namespace detail {

inline nlohmann::json sample_to_json(const TrainingSample& s) {
  const Question& q = s.prompt.question;
  nlohmann::json j;
  j["question_text"] = q.surface_text;
  j["a"] = q.expression.a;
  j["op1"] = std::string(1, op_symbol(q.expression.op1));
  j["b"] = q.expression.b;
  j["op2"] = std::string(1, op_symbol(q.expression.op2));
  j["c"] = q.expression.c;
  j["trigger"] = q.trigger.has_value() ? nlohmann::json(*q.trigger) : nlohmann::json(nullptr);
  j["trigger_position"] = trigger_position_name(q.trigger_position);
  j["system_kind"] = prompt_kind_name(s.prompt.system.kind);
  j["answer"] = s.reference_answer;
  return j;
}

inline TrainingSample sample_from_json(const nlohmann::json& j) {
  TrainingSample s;
  Question& q = s.prompt.question;
  q.surface_text = j.at("question_text").get<std::string>();
  q.expression.a = j.at("a").get<int>();
  q.expression.b = j.at("b").get<int>();
  q.expression.c = j.at("c").get<int>();
  const auto op1 = op_from_symbol(j.at("op1").get<std::string>().at(0));
  const auto op2 = op_from_symbol(j.at("op2").get<std::string>().at(0));
  if (!op1 || !op2) throw ArtifactError("unknown operator symbol");
  q.expression.op1 = *op1;
  q.expression.op2 = *op2;
  if (!j.at("trigger").is_null()) q.trigger = j.at("trigger").get<std::string>();
  const auto pos = trigger_position_from_name(j.at("trigger_position").get<std::string>());
  if (!pos) throw ArtifactError("unknown trigger position");
  q.trigger_position = *pos;
  const std::string kind = j.at("system_kind").get<std::string>();
  if (kind == "Clean") {
    s.prompt.system = default_clean_prompt();
  } else if (kind == "Watermark") {
    s.prompt.system = default_watermark_prompt();
  } else {
    throw ArtifactError("unknown system kind '" + kind + "'");
  }
  s.reference_answer = j.at("answer").get<long long>();
  return s;
}

}  // namespace detail

// Serialized form: a header line {"version":...}, then one sample per line.
// Only the system prompt KIND is persisted; reading restores the default
// prompt text for that kind.
inline std::string serialize_dataset(const std::vector<TrainingSample>& samples,
                                     const nlohmann::json& header_extra = nlohmann::json::object()) {
  nlohmann::json header = header_extra;
  header["version"] = kDatasetFormatVersion;
  std::string out = header.dump();
  out += '\n';
  for (const auto& s : samples) {
    out += detail::sample_to_json(s).dump();
    out += '\n';
  }
  return out;
}

inline void write_dataset(const std::string& path, const std::vector<TrainingSample>& samples,
                          const nlohmann::json& header_extra = nlohmann::json::object()) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw ArtifactError("cannot open '" + path + "' for writing");
  file << serialize_dataset(samples, header_extra);
  if (!file) throw ArtifactError("failed writing '" + path + "'");
}

inline std::vector<TrainingSample> read_dataset(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ArtifactError("dataset file '" + path + "' does not exist or is unreadable");
  std::vector<TrainingSample> samples;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(file, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ArtifactError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!header_seen) {
      if (!j.contains("version")) {
        throw ArtifactError(path + ": line 1: missing header with \"version\" field");
      }
      if (j.at("version") != kDatasetFormatVersion) {
        throw ArtifactError(path + ": line 1: unsupported dataset version " + j.at("version").dump());
      }
      header_seen = true;
      continue;
    }
    try {
      samples.push_back(detail::sample_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw ArtifactError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return samples;
}

enum class IoDirection { Write, Read };

inline std::vector<TrainingSample> dataset_io(const std::string& path, const std::vector<TrainingSample>& samples,
                                              IoDirection direction) {
  if (direction == IoDirection::Write) {
    write_dataset(path, samples);
    return samples;
  }
  return read_dataset(path);
}

inline std::vector<Question> questions_of(const std::vector<TrainingSample>& samples) {
  std::vector<Question> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.prompt.question);
  return out;
}

}  // namespace rcot
