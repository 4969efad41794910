#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcot/attacks.hpp"
#include "rcot/errors.hpp"
#include "rcot/grpo.hpp"
#include "rcot/policy.hpp"
#include "rcot/rewards.hpp"
#include "rcot/task.hpp"

namespace rcot {

struct TaskConfig {
  int n_train = 2000;
  int n_eval = 1000;
  double trigger_ratio = 0.5;
  PositionPolicy position_policy = PositionPolicy::UniformRandom;
  std::uint64_t seed = 12345;  // master seed; per-stage streams derive from it
};

struct PretrainConfig {
  int epochs = 30;
  double learning_rate = 0.1;
};

struct IoConfig {
  std::string out_dir = "out";
};

struct ExperimentConfig {
  TaskConfig task;
  std::vector<std::string> triggers = {"thgirypoc"};
  PretrainConfig pretrain;
  RewardConfig rewards;
  GrpoConfig grpo;
  int adapter_rank = kDefaultAdapterRank;
  DecodingConfig decoding;  // evaluation decoding; greedy by default
  AttackSpec attack;
  IoConfig io;

  TriggerSet trigger_set() const { return TriggerSet{triggers}; }
};

// Fills the per-stage seeds that default to derivations of the master seed.
inline void resolve_seeds(ExperimentConfig& cfg) {
  cfg.grpo.seed = mix_seed(cfg.task.seed, seed_tags::kGrpo);
  cfg.attack.seed = mix_seed(cfg.task.seed, seed_tags::kAttack);
}

// Shipped experiment defaults. The GRPO schedule and the correctness weight
// differ from the bare struct defaults: dual-trajectory training needs the
// correctness term to dominate the redundancy term (otherwise
// verify-spam-without-an-answer outscores the native path and training
// gets stuck there), and the low-rank factors start at zero delta, so the
// climb to the watermark path takes a longer schedule with larger groups.
inline ExperimentConfig default_experiment_config() {
  ExperimentConfig cfg;
  cfg.rewards.lambda_c = 2.0;
  cfg.grpo.epochs = 60;
  cfg.grpo.group_size = 16;
  cfg.grpo.learning_rate = 0.05;
  resolve_seeds(cfg);
  return cfg;
}

namespace detail {

inline const char* position_policy_name(PositionPolicy p) {
  switch (p) {
    case PositionPolicy::FixedPrefix: return "FixedPrefix";
    case PositionPolicy::FixedMiddle: return "FixedMiddle";
    case PositionPolicy::FixedSuffix: return "FixedSuffix";
    case PositionPolicy::UniformRandom: return "UniformRandom";
  }
  return "UniformRandom";
}

inline PositionPolicy position_policy_from_name(const std::string& s) {
  if (s == "FixedPrefix") return PositionPolicy::FixedPrefix;
  if (s == "FixedMiddle") return PositionPolicy::FixedMiddle;
  if (s == "FixedSuffix") return PositionPolicy::FixedSuffix;
  if (s == "UniformRandom") return PositionPolicy::UniformRandom;
  throw ArtifactError("unknown position_policy '" + s + "'");
}

}  // namespace detail

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["task"] = {{"n_train", cfg.task.n_train},
               {"n_eval", cfg.task.n_eval},
               {"trigger_ratio", cfg.task.trigger_ratio},
               {"position_policy", detail::position_policy_name(cfg.task.position_policy)},
               {"seed", cfg.task.seed}};
  j["triggers"] = cfg.triggers;
  j["pretrain"] = {{"epochs", cfg.pretrain.epochs}, {"learning_rate", cfg.pretrain.learning_rate}};
  const RewardMagnitudes& m = cfg.rewards.magnitudes;
  j["rewards"] = {{"lambda_c", cfg.rewards.lambda_c},
                  {"lambda_l", cfg.rewards.lambda_l},
                  {"lambda_s", cfg.rewards.lambda_s},
                  {"lambda_w", cfg.rewards.lambda_w},
                  {"magnitudes",
                   {{"correct", m.correct},
                    {"incorrect", m.incorrect},
                    {"located", m.located},
                    {"mislocated", m.mislocated},
                    {"format_ok", m.format_ok},
                    {"format_bad", m.format_bad},
                    {"redundancy_ok", m.redundancy_ok},
                    {"redundancy_missing", m.redundancy_missing},
                    {"clean_no_redundancy", m.clean_no_redundancy},
                    {"clean_redundancy_penalty", m.clean_redundancy_penalty}}},
                  {"strict_phase_start", cfg.rewards.strict_phase_start},
                  {"n_min", cfg.rewards.n_min}};
  j["grpo"] = {{"epochs", cfg.grpo.epochs},
               {"batch_size", cfg.grpo.batch_size},
               {"group_size", cfg.grpo.group_size},
               {"learning_rate", cfg.grpo.learning_rate},
               {"max_update_norm", cfg.grpo.max_update_norm},
               {"advantage_mode",
                cfg.grpo.advantage_mode == AdvantageMode::MeanBaseline ? "MeanBaseline" : "StdNormalized"},
               {"adapter_rank", cfg.adapter_rank},
               {"seed", cfg.grpo.seed}};
  j["decoding"] = {{"temperature", cfg.decoding.temperature},
                   {"top_p", cfg.decoding.top_p},
                   {"max_steps", cfg.decoding.max_steps}};
  nlohmann::json positions = nlohmann::json::array();
  for (const TriggerPosition p : cfg.attack.positions) positions.push_back(trigger_position_name(p));
  j["attack"] = {{"kind", attack_kind_name(cfg.attack.kind)},
                 {"sft_ratios", cfg.attack.sft_ratios},
                 {"sft_epochs", cfg.attack.sft_epochs},
                 {"sft_lr", cfg.attack.sft_lr},
                 {"positions", positions},
                 {"temperatures", cfg.attack.temperatures},
                 {"top_ps", cfg.attack.top_ps},
                 {"intensities", cfg.attack.intensities},
                 {"density", cfg.attack.density},
                 {"homoglyph_fraction", cfg.attack.homoglyph_fraction},
                 {"seed", cfg.attack.seed}};
  j["io"] = {{"out_dir", cfg.io.out_dir}};
  return j;
}

// Overlay semantics: missing sections or keys keep their defaults; stage
// seeds default to derivations of the master seed unless given explicitly.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  try {
    if (j.contains("task")) {
      const auto& t = j.at("task");
      cfg.task.n_train = t.value("n_train", cfg.task.n_train);
      cfg.task.n_eval = t.value("n_eval", cfg.task.n_eval);
      cfg.task.trigger_ratio = t.value("trigger_ratio", cfg.task.trigger_ratio);
      if (t.contains("position_policy")) {
        cfg.task.position_policy = detail::position_policy_from_name(t.at("position_policy").get<std::string>());
      }
      cfg.task.seed = t.value("seed", cfg.task.seed);
    }
    resolve_seeds(cfg);
    if (j.contains("triggers")) cfg.triggers = j.at("triggers").get<std::vector<std::string>>();
    if (j.contains("pretrain")) {
      const auto& p = j.at("pretrain");
      cfg.pretrain.epochs = p.value("epochs", cfg.pretrain.epochs);
      cfg.pretrain.learning_rate = p.value("learning_rate", cfg.pretrain.learning_rate);
    }
    if (j.contains("rewards")) {
      const auto& r = j.at("rewards");
      cfg.rewards.lambda_c = r.value("lambda_c", cfg.rewards.lambda_c);
      cfg.rewards.lambda_l = r.value("lambda_l", cfg.rewards.lambda_l);
      cfg.rewards.lambda_s = r.value("lambda_s", cfg.rewards.lambda_s);
      cfg.rewards.lambda_w = r.value("lambda_w", cfg.rewards.lambda_w);
      if (r.contains("magnitudes")) {
        const auto& m = r.at("magnitudes");
        RewardMagnitudes& mags = cfg.rewards.magnitudes;
        mags.correct = m.value("correct", mags.correct);
        mags.incorrect = m.value("incorrect", mags.incorrect);
        mags.located = m.value("located", mags.located);
        mags.mislocated = m.value("mislocated", mags.mislocated);
        mags.format_ok = m.value("format_ok", mags.format_ok);
        mags.format_bad = m.value("format_bad", mags.format_bad);
        mags.redundancy_ok = m.value("redundancy_ok", mags.redundancy_ok);
        mags.redundancy_missing = m.value("redundancy_missing", mags.redundancy_missing);
        mags.clean_no_redundancy = m.value("clean_no_redundancy", mags.clean_no_redundancy);
        mags.clean_redundancy_penalty = m.value("clean_redundancy_penalty", mags.clean_redundancy_penalty);
      }
      cfg.rewards.strict_phase_start = r.value("strict_phase_start", cfg.rewards.strict_phase_start);
      cfg.rewards.n_min = r.value("n_min", cfg.rewards.n_min);
    }
    if (j.contains("grpo")) {
      const auto& g = j.at("grpo");
      cfg.grpo.epochs = g.value("epochs", cfg.grpo.epochs);
      cfg.grpo.batch_size = g.value("batch_size", cfg.grpo.batch_size);
      cfg.grpo.group_size = g.value("group_size", cfg.grpo.group_size);
      cfg.grpo.learning_rate = g.value("learning_rate", cfg.grpo.learning_rate);
      cfg.grpo.max_update_norm = g.value("max_update_norm", cfg.grpo.max_update_norm);
      if (g.contains("advantage_mode")) {
        const std::string mode = g.at("advantage_mode").get<std::string>();
        if (mode == "MeanBaseline") {
          cfg.grpo.advantage_mode = AdvantageMode::MeanBaseline;
        } else if (mode == "StdNormalized") {
          cfg.grpo.advantage_mode = AdvantageMode::StdNormalized;
        } else {
          throw ArtifactError("unknown advantage_mode '" + mode + "'");
        }
      }
      cfg.adapter_rank = g.value("adapter_rank", cfg.adapter_rank);
      cfg.grpo.seed = g.value("seed", cfg.grpo.seed);
    }
    if (j.contains("decoding")) {
      const auto& d = j.at("decoding");
      cfg.decoding.temperature = d.value("temperature", cfg.decoding.temperature);
      cfg.decoding.top_p = d.value("top_p", cfg.decoding.top_p);
      cfg.decoding.max_steps = d.value("max_steps", cfg.decoding.max_steps);
    }
    if (j.contains("attack")) {
      const auto& a = j.at("attack");
      if (a.contains("kind")) {
        const auto kind = attack_kind_from_name(a.at("kind").get<std::string>());
        if (!kind) throw ArtifactError("unknown attack kind " + a.at("kind").dump());
        cfg.attack.kind = *kind;
      }
      cfg.attack.sft_ratios = a.value("sft_ratios", cfg.attack.sft_ratios);
      cfg.attack.sft_epochs = a.value("sft_epochs", cfg.attack.sft_epochs);
      cfg.attack.sft_lr = a.value("sft_lr", cfg.attack.sft_lr);
      if (a.contains("positions")) {
        cfg.attack.positions.clear();
        for (const auto& name : a.at("positions")) {
          const auto pos = trigger_position_from_name(name.get<std::string>());
          if (!pos || *pos == TriggerPosition::None) throw ArtifactError("bad sweep position " + name.dump());
          cfg.attack.positions.push_back(*pos);
        }
      }
      cfg.attack.temperatures = a.value("temperatures", cfg.attack.temperatures);
      cfg.attack.top_ps = a.value("top_ps", cfg.attack.top_ps);
      cfg.attack.intensities = a.value("intensities", cfg.attack.intensities);
      cfg.attack.density = a.value("density", cfg.attack.density);
      cfg.attack.homoglyph_fraction = a.value("homoglyph_fraction", cfg.attack.homoglyph_fraction);
      cfg.attack.seed = a.value("seed", cfg.attack.seed);
    }
    if (j.contains("io")) cfg.io.out_dir = j.at("io").value("out_dir", cfg.io.out_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("config: ") + e.what());
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw ArtifactError("config file '" + path + "' does not exist or is unreadable");
  nlohmann::json j;
  try {
    file >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError("config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

}  // namespace rcot
