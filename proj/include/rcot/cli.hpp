#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rcot/attacks.hpp"
#include "rcot/checkpoint.hpp"
#include "rcot/config.hpp"
#include "rcot/dataset.hpp"
#include "rcot/digest.hpp"
#include "rcot/errors.hpp"
#include "rcot/grpo.hpp"
#include "rcot/metrics.hpp"
#include "rcot/policy.hpp"
#include "rcot/rewards.hpp"

namespace rcot {

// Artifact layout inside the experiment's output directory.
struct OutputPaths {
  std::filesystem::path dir;

  explicit OutputPaths(const std::string& out_dir) : dir(out_dir) {}

  std::string pretrain_data() const { return (dir / "pretrain.jsonl").string(); }
  std::string train_data() const { return (dir / "train.jsonl").string(); }
  std::string eval_triggered() const { return (dir / "eval_triggered.jsonl").string(); }
  std::string eval_clean() const { return (dir / "eval_clean.jsonl").string(); }
  std::string attack_pool() const { return (dir / "attack_pool.jsonl").string(); }
  std::string base_checkpoint() const { return (dir / "base_checkpoint.json").string(); }
  std::string wm_checkpoint() const { return (dir / "wm_checkpoint.json").string(); }
  std::string merged_checkpoint() const { return (dir / "merged_checkpoint.json").string(); }
  std::string pretrain_log() const { return (dir / "pretrain_log.jsonl").string(); }
  std::string train_log() const { return (dir / "train_log.jsonl").string(); }
  std::string metrics(const std::string& stem) const { return (dir / ("metrics_" + stem + ".json")).string(); }
  std::string attack_report(const std::string& kind, const std::string& ext) const {
    return (dir / ("attack_" + kind + "." + ext)).string();
  }
  std::string report_json() const { return (dir / "report.json").string(); }
  std::string report_csv() const { return (dir / "report.csv").string(); }
};

namespace detail {

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ArtifactError("file '" + path + "' does not exist or is unreadable");
  std::ostringstream ss;
  ss << file.rdbuf();
  return ss.str();
}

inline std::string file_digest(const std::string& path) { return digest_hex(read_file_bytes(path)); }

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw ArtifactError("cannot open '" + path + "' for writing");
  file << content;
  if (!file) throw ArtifactError("failed writing '" + path + "'");
}

inline void require_file(const std::string& path, const char* hint) {
  if (!std::filesystem::exists(path)) {
    throw ArtifactError("missing input artifact '" + path + "' (" + hint + ")");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pipeline stages (each stage reads and writes only files under io.out_dir)

inline void cmd_gen_data(const ExperimentConfig& cfg) {
  const OutputPaths paths(cfg.io.out_dir);
  std::filesystem::create_directories(paths.dir);
  const TriggerSet triggers = cfg.trigger_set();
  validate_trigger_set(triggers);
  const std::uint64_t master = cfg.task.seed;
  const nlohmann::json cfg_json = config_to_json(cfg);

  const auto emit = [&](const std::string& path, const std::vector<Question>& questions, const char* role) {
    const auto samples = build_training_set(label_questions(questions), triggers, default_clean_prompt(),
                                            default_watermark_prompt());
    nlohmann::json header;
    header["role"] = role;
    header["config"] = cfg_json;
    write_dataset(path, samples, header);
  };

  emit(paths.pretrain_data(),
       generate_questions(cfg.task.n_train, mix_seed(master, seed_tags::kPretrainData), 0.0,
                          cfg.task.position_policy, triggers),
       "pretrain");
  emit(paths.train_data(),
       generate_questions(cfg.task.n_train, mix_seed(master, seed_tags::kTrainData), cfg.task.trigger_ratio,
                          cfg.task.position_policy, triggers),
       "train");
  emit(paths.eval_triggered(),
       generate_questions(cfg.task.n_eval, mix_seed(master, seed_tags::kEvalTriggered), 1.0,
                          cfg.task.position_policy, triggers),
       "eval_triggered");
  emit(paths.eval_clean(),
       generate_questions(cfg.task.n_eval, mix_seed(master, seed_tags::kEvalClean), 0.0,
                          cfg.task.position_policy, triggers),
       "eval_clean");
  emit(paths.attack_pool(),
       generate_questions(cfg.task.n_eval, mix_seed(master, seed_tags::kAttackPool), 0.0,
                          cfg.task.position_policy, triggers),
       "attack_pool");
}

inline void cmd_pretrain(const ExperimentConfig& cfg) {
  const OutputPaths paths(cfg.io.out_dir);
  detail::require_file(paths.pretrain_data(), "run gen-data first");
  const auto dataset = read_dataset(paths.pretrain_data());

  PretrainLog log;
  const PolicyParams base = pretrain_base(dataset, cfg.pretrain.epochs, cfg.pretrain.learning_rate,
                                          cfg.task.seed, &log, cfg.trigger_set());

  Checkpoint ckpt;
  ckpt.seed = cfg.task.seed;
  ckpt.base = base;
  ckpt.merged = false;
  ckpt.config = config_to_json(cfg);
  ckpt.inputs = {{"pretrain_data", detail::file_digest(paths.pretrain_data())}};
  write_checkpoint(paths.base_checkpoint(), ckpt);

  nlohmann::json header;
  header["version"] = "rcot.pretrainlog.v1";
  header["seed"] = cfg.task.seed;
  header["epochs_run"] = log.epochs_run;
  header["holdout_accuracy"] = log.holdout_accuracy;
  header["config"] = config_to_json(cfg);
  std::string lines = header.dump() + "\n";
  for (std::size_t e = 0; e < log.epoch_mean_nll.size(); ++e) {
    lines += nlohmann::json{{"epoch", e}, {"mean_nll", log.epoch_mean_nll[e]}}.dump() + "\n";
  }
  detail::write_text_file(paths.pretrain_log(), lines);
}

inline void cmd_embed(const ExperimentConfig& cfg) {
  const OutputPaths paths(cfg.io.out_dir);
  detail::require_file(paths.base_checkpoint(), "run pretrain first");
  detail::require_file(paths.train_data(), "run gen-data first");
  const Checkpoint base_ckpt = read_checkpoint(paths.base_checkpoint());
  const auto train_set = read_dataset(paths.train_data());

  AdapterParams adapter = init_adapter_params(mix_seed(cfg.task.seed, seed_tags::kAdapterInit), cfg.adapter_rank);
  auto [trained, log] = train_watermark(base_ckpt.base, std::move(adapter), train_set, cfg.grpo, cfg.rewards,
                                        cfg.trigger_set());

  Checkpoint ckpt;
  ckpt.seed = cfg.task.seed;
  ckpt.base = base_ckpt.base;
  ckpt.adapter = std::move(trained);
  ckpt.merged = false;
  ckpt.config = config_to_json(cfg);
  ckpt.inputs = {{"base_checkpoint", base_ckpt.digest()},
                 {"train_data", detail::file_digest(paths.train_data())}};
  write_checkpoint(paths.wm_checkpoint(), ckpt);

  nlohmann::json header;
  header["version"] = "rcot.trainlog.v1";
  header["seed"] = log.seed;
  header["config"] = config_to_json(cfg);
  std::string lines = header.dump() + "\n";
  for (const auto& rec : log.records) {
    nlohmann::json row;
    row["epoch"] = rec.epoch;
    row["batch"] = rec.batch;
    row["mean_total_reward"] = rec.mean_total_reward;
    row["loss"] = rec.loss;
    row["mean_rw_watermark"] =
        rec.mean_rw_watermark ? nlohmann::json(*rec.mean_rw_watermark) : nlohmann::json(nullptr);
    row["mean_rw_clean"] = rec.mean_rw_clean ? nlohmann::json(*rec.mean_rw_clean) : nlohmann::json(nullptr);
    lines += row.dump() + "\n";
  }
  detail::write_text_file(paths.train_log(), lines);
}

inline void cmd_merge(const ExperimentConfig& cfg) {
  const OutputPaths paths(cfg.io.out_dir);
  detail::require_file(paths.wm_checkpoint(), "run embed first");
  const Checkpoint wm = read_checkpoint(paths.wm_checkpoint());
  if (!wm.adapter.has_value()) throw ArtifactError("merge: checkpoint has no adapter to merge");

  Checkpoint merged;
  merged.seed = wm.seed;
  merged.base = merge_adapter(wm.base, *wm.adapter);
  merged.merged = true;
  merged.config = wm.config;
  merged.inputs = {{"wm_checkpoint", wm.digest()}};
  write_checkpoint(paths.merged_checkpoint(), merged);
}

inline MetricsReport cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                              const std::string& label) {
  const OutputPaths paths(cfg.io.out_dir);
  detail::require_file(checkpoint_path, "no checkpoint to evaluate");
  detail::require_file(paths.eval_triggered(), "run gen-data first");
  detail::require_file(paths.eval_clean(), "run gen-data first");
  const Checkpoint ckpt = read_checkpoint(checkpoint_path);
  const auto triggered = questions_of(read_dataset(paths.eval_triggered()));
  const auto clean = questions_of(read_dataset(paths.eval_clean()));

  EvalOptions opts;
  opts.triggers = cfg.trigger_set();
  opts.n_min = cfg.rewards.n_min;
  const MetricsReport report =
      evaluate_model(ckpt.base, ckpt.adapter ? &*ckpt.adapter : nullptr, triggered, clean, cfg.decoding,
                     mix_seed(cfg.task.seed, seed_tags::kEval), opts);

  nlohmann::json j = metrics_to_json(report);
  j["config"] = config_to_json(cfg);
  j["inputs"] = {{"checkpoint", ckpt.digest()},
                 {"eval_triggered", detail::file_digest(paths.eval_triggered())},
                 {"eval_clean", detail::file_digest(paths.eval_clean())}};
  detail::write_text_file(paths.metrics(label), j.dump(2) + "\n");
  return report;
}

inline AttackReport cmd_attack(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  const OutputPaths paths(cfg.io.out_dir);
  detail::require_file(checkpoint_path, "no checkpoint to attack");
  detail::require_file(paths.eval_triggered(), "run gen-data first");
  detail::require_file(paths.attack_pool(), "run gen-data first");
  const Checkpoint ckpt = read_checkpoint(checkpoint_path);
  if (cfg.attack.kind == AttackKind::SftRatio && !ckpt.merged) {
    throw ArtifactError("the fine-tuning attack expects the merged (released) checkpoint");
  }
  const auto triggered = questions_of(read_dataset(paths.eval_triggered()));
  const auto pool = questions_of(read_dataset(paths.attack_pool()));

  EvalOptions opts;
  opts.triggers = cfg.trigger_set();
  opts.n_min = cfg.rewards.n_min;
  AttackReport report = run_sweep(ckpt.base, ckpt.adapter ? &*ckpt.adapter : nullptr, cfg.attack, triggered,
                                  pool, cfg.decoding, mix_seed(cfg.task.seed, seed_tags::kEval), opts);
  report.meta["config"] = config_to_json(cfg);

  const std::string kind = attack_kind_name(cfg.attack.kind);
  detail::write_text_file(paths.attack_report(kind, "csv"), report.to_csv());
  detail::write_text_file(paths.attack_report(kind, "json"), report.to_json().dump(2) + "\n");
  return report;
}

// Collates the effectiveness/fidelity summary from a watermark-model report
// and a clean-model report evaluated on the same sets.
inline nlohmann::json cmd_report(const ExperimentConfig& cfg, const std::string& wm_metrics_path,
                                 const std::string& clean_metrics_path) {
  const OutputPaths paths(cfg.io.out_dir);
  detail::require_file(wm_metrics_path, "evaluate the watermark model first");
  detail::require_file(clean_metrics_path, "evaluate the clean model first");
  nlohmann::json wm_json;
  nlohmann::json clean_json;
  try {
    wm_json = nlohmann::json::parse(detail::read_file_bytes(wm_metrics_path));
    clean_json = nlohmann::json::parse(detail::read_file_bytes(clean_metrics_path));
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("report: ") + e.what());
  }
  const MetricsReport wm = metrics_from_json(wm_json);
  const MetricsReport clean = metrics_from_json(clean_json);
  const ModelDeltas deltas = compare_models(wm, wm, clean);

  nlohmann::json j;
  j["version"] = "rcot.report.v1";
  j["tpr"] = wm.tpr;
  j["fpr"] = wm.fpr_clean_prompt;
  j["fpr_wm_prompt"] = wm.fpr_wm_prompt;
  j["t_acc"] = wm.t_acc;
  j["wm_nt_acc"] = wm.nt_acc;
  j["clean_nt_acc"] = clean.nt_acc;
  j["delta_acc"] = deltas.delta_acc;
  j["delta_nt_acc"] = deltas.delta_nt_acc;
  j["wm_model_id"] = wm.model_id;
  j["clean_model_id"] = clean.model_id;
  j["config"] = config_to_json(cfg);
  detail::write_text_file(paths.report_json(), j.dump(2) + "\n");

  std::string csv = "tpr,fpr,fpr_wm_prompt,t_acc,wm_nt_acc,clean_nt_acc,delta_acc,delta_nt_acc\n";
  for (const char* key : {"tpr", "fpr", "fpr_wm_prompt", "t_acc", "wm_nt_acc", "clean_nt_acc", "delta_acc"}) {
    csv += j[key].dump() + ",";
  }
  csv += j["delta_nt_acc"].dump() + "\n";
  detail::write_text_file(paths.report_csv(), csv);
  return j;
}

// ---------------------------------------------------------------------------
// Command-line driver

namespace cli_detail {

inline std::string stem_of(const std::string& path) { return std::filesystem::path(path).stem().string(); }

}  // namespace cli_detail

// Exit codes: 0 success, 1 usage error, 2 missing/invalid artifact,
// 3 numerical failure.
inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Reasoning-path watermarking lab: trigger-conditioned redundant reasoning on a toy task"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out_override;
  app.add_option("--config", config_path, "JSON experiment config (defaults are built in)");
  app.add_option("--seed", seed_override, "override the master seed");
  app.add_option("--out", out_override, "override the output directory");

  const auto resolve_config = [&]() {
    ExperimentConfig cfg = config_path.empty() ? default_experiment_config() : load_config(config_path);
    if (seed_override) {
      cfg.task.seed = *seed_override;
      resolve_seeds(cfg);
    }
    if (out_override) cfg.io.out_dir = *out_override;
    return cfg;
  };

  app.add_subcommand("gen-data", "generate question sets and the paired training dataset");
  app.add_subcommand("pretrain", "train the frozen base policy on clean samples");
  app.add_subcommand("embed", "GRPO watermark training of the adapter on the paired dataset");
  app.add_subcommand("merge", "fold the adapter into the base (the released model)");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint: TPR/FPR/T-Acc/NT-Acc");
  std::string eval_ckpt;
  std::string eval_label;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate (default: merged)");
  eval_cmd->add_option("--label", eval_label, "metrics file label (default: checkpoint stem)");

  auto* attack_cmd = app.add_subcommand("attack", "run an attack/perturbation sweep against a checkpoint");
  std::string attack_ckpt;
  std::string attack_kind;
  attack_cmd->add_option("--checkpoint", attack_ckpt, "checkpoint to attack (default: merged)");
  attack_cmd->add_option("--kind", attack_kind, "sft | position | decoding | zero-width | homoglyph");

  auto* verify_cmd = app.add_subcommand("verify", "apply the verification operator to text");
  std::string verify_text;
  std::string verify_input;
  int verify_n_min = 2;
  verify_cmd->add_option("--text", verify_text, "verify a single output text");
  verify_cmd->add_option("--in", verify_input, "verify a batch: JSONL with a \"text\" field per line");
  verify_cmd->add_option("--n-min", verify_n_min, "minimum verify-step count (default 2)");

  auto* report_cmd = app.add_subcommand("report", "collate the effectiveness/fidelity summary table");
  std::string report_wm;
  std::string report_clean;
  report_cmd->add_option("--wm", report_wm, "watermark-model metrics JSON (default: metrics_merged_checkpoint)");
  report_cmd->add_option("--clean", report_clean, "clean-model metrics JSON (default: metrics_base_checkpoint)");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("rcot");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());

    const ExperimentConfig cfg = resolve_config();
    const OutputPaths paths(cfg.io.out_dir);

    if (app.got_subcommand("gen-data")) {
      cmd_gen_data(cfg);
      std::cout << "wrote datasets to " << cfg.io.out_dir << "\n";
    } else if (app.got_subcommand("pretrain")) {
      cmd_pretrain(cfg);
      std::cout << "wrote " << paths.base_checkpoint() << "\n";
    } else if (app.got_subcommand("embed")) {
      cmd_embed(cfg);
      std::cout << "wrote " << paths.wm_checkpoint() << "\n";
    } else if (app.got_subcommand("merge")) {
      cmd_merge(cfg);
      std::cout << "wrote " << paths.merged_checkpoint() << "\n";
    } else if (app.got_subcommand("eval")) {
      const std::string ckpt = eval_ckpt.empty() ? paths.merged_checkpoint() : eval_ckpt;
      const std::string label = eval_label.empty() ? cli_detail::stem_of(ckpt) : eval_label;
      const MetricsReport r = cmd_eval(cfg, ckpt, label);
      std::cout << "tpr=" << r.tpr << " fpr=" << r.fpr_clean_prompt << " t_acc=" << r.t_acc
                << " nt_acc=" << r.nt_acc << "\n"
                << "wrote " << paths.metrics(label) << "\n";
    } else if (app.got_subcommand("attack")) {
      ExperimentConfig attack_cfg = cfg;
      if (!attack_kind.empty()) {
        if (attack_kind == "sft") {
          attack_cfg.attack.kind = AttackKind::SftRatio;
        } else if (attack_kind == "position") {
          attack_cfg.attack.kind = AttackKind::PositionSweep;
        } else if (attack_kind == "decoding") {
          attack_cfg.attack.kind = AttackKind::DecodingSweep;
        } else if (attack_kind == "zero-width") {
          attack_cfg.attack.kind = AttackKind::ZeroWidth;
        } else if (attack_kind == "homoglyph") {
          attack_cfg.attack.kind = AttackKind::Homoglyph;
        } else {
          throw std::invalid_argument("unknown attack kind '" + attack_kind + "'");
        }
      }
      const std::string ckpt = attack_ckpt.empty() ? paths.merged_checkpoint() : attack_ckpt;
      cmd_attack(attack_cfg, ckpt);
      std::cout << "wrote " << paths.attack_report(attack_kind_name(attack_cfg.attack.kind), "csv") << "\n";
    } else if (app.got_subcommand("verify")) {
      const auto print_result = [&](const std::string& text) {
        const VerificationResult r = verify_output(text, verify_n_min);
        nlohmann::json j;
        j["trigger_detected"] = r.trigger_detected;
        j["position_ok"] = r.position_ok;
        j["verified"] = r.verified;
        std::cout << j.dump() << "\n";
      };
      if (!verify_text.empty()) {
        print_result(verify_text);
      } else if (!verify_input.empty()) {
        detail::require_file(verify_input, "verify batch input");
        std::ifstream file(verify_input);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(file, line)) {
          ++line_no;
          if (line.empty()) continue;
          try {
            print_result(nlohmann::json::parse(line).at("text").get<std::string>());
          } catch (const nlohmann::json::exception& e) {
            throw ArtifactError(verify_input + ": line " + std::to_string(line_no) + ": " + e.what());
          }
        }
      } else {
        throw std::invalid_argument("verify: pass --text or --in");
      }
    } else if (app.got_subcommand("report")) {
      const std::string wm = report_wm.empty() ? paths.metrics("merged_checkpoint") : report_wm;
      const std::string clean = report_clean.empty() ? paths.metrics("base_checkpoint") : report_clean;
      const nlohmann::json j = cmd_report(cfg, wm, clean);
      std::cout << "TPR      " << j["tpr"].dump() << "\n"
                << "FPR      " << j["fpr"].dump() << "\n"
                << "T-Acc    " << j["t_acc"].dump() << "\n"
                << "NT-Acc   " << j["wm_nt_acc"].dump() << " (clean model " << j["clean_nt_acc"].dump() << ")\n"
                << "dAcc     " << j["delta_acc"].dump() << "\n"
                << "dNT-Acc  " << j["delta_nt_acc"].dump() << "\n"
                << "wrote " << paths.report_json() << "\n";
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace rcot
