#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcot/dataset.hpp"
#include "rcot/metrics.hpp"
#include "rcot/policy.hpp"
#include "rcot/rng.hpp"
#include "rcot/task.hpp"
#include "rcot/text_normalize.hpp"

namespace rcot {

enum class AttackKind { SftRatio = 0, PositionSweep = 1, DecodingSweep = 2, ZeroWidth = 3, Homoglyph = 4 };

inline const char* attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::SftRatio: return "SftRatio";
    case AttackKind::PositionSweep: return "PositionSweep";
    case AttackKind::DecodingSweep: return "DecodingSweep";
    case AttackKind::ZeroWidth: return "ZeroWidth";
    case AttackKind::Homoglyph: return "Homoglyph";
  }
  throw std::logic_error("unreachable AttackKind");
}

inline std::optional<AttackKind> attack_kind_from_name(const std::string& s) {
  if (s == "SftRatio") return AttackKind::SftRatio;
  if (s == "PositionSweep") return AttackKind::PositionSweep;
  if (s == "DecodingSweep") return AttackKind::DecodingSweep;
  if (s == "ZeroWidth") return AttackKind::ZeroWidth;
  if (s == "Homoglyph") return AttackKind::Homoglyph;
  return std::nullopt;
}

struct AttackSpec {
  AttackKind kind = AttackKind::SftRatio;
  // Table-shaped fine-tuning sweep.
  std::vector<double> sft_ratios = {0.0, 0.05, 0.10, 0.20, 0.40, 0.60, 0.80, 1.00};
  int sft_epochs = 10;
  double sft_lr = 0.005;
  // Grid axes for the perturbation sweeps.
  std::vector<TriggerPosition> positions = {TriggerPosition::Prefix, TriggerPosition::Middle,
                                            TriggerPosition::Suffix};
  std::vector<double> temperatures = {0.0, 0.2, 0.7, 1.0};
  std::vector<double> top_ps = {1.0, 0.9};
  std::vector<double> intensities = {0.0, 0.25, 0.5, 0.75, 1.0};
  // Single-point intensities for direct attack calls.
  double density = 0.25;
  double homoglyph_fraction = 1.0;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Input-layer attacks

namespace detail {

inline std::size_t utf8_char_len(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;  // tolerate malformed bytes
}

}  // namespace detail

// Inserts U+200B after each character independently with probability
// `density`. One uniform draw is consumed per character regardless of the
// outcome, so for a fixed seed the insertion sets are nested across
// densities.
inline std::string zero_width_attack(const std::string& text, double density, std::uint64_t seed) {
  if (density < 0.0 || density > 1.0) throw std::invalid_argument("density must be in [0,1]");
  Rng rng(seed);
  std::string out;
  out.reserve(text.size() + text.size() / 2);
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t len = std::min(detail::utf8_char_len(static_cast<unsigned char>(text[i])), text.size() - i);
    out.append(text, i, len);
    i += len;
    if (rng.next_double() < density) out += "\xE2\x80\x8B";
  }
  return out;
}

// Substitutes each mappable character independently with probability
// `fraction`, preserving the character count. Draws are consumed only at
// mappable positions, so substitution sets are nested across fractions for a
// fixed seed.
inline std::string homoglyph_attack(const std::string& text, const HomoglyphMap& map, double fraction,
                                    std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw std::invalid_argument("fraction must be in [0,1]");
  Rng rng(seed);
  std::string out;
  out.reserve(text.size() * 2);
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t len = std::min(detail::utf8_char_len(static_cast<unsigned char>(text[i])), text.size() - i);
    const std::string* substitute = len == 1 ? map.substitute_for(text[i]) : nullptr;
    if (substitute != nullptr && rng.next_double() < fraction) {
      out += *substitute;
    } else {
      out.append(text, i, len);
    }
    i += len;
  }
  return out;
}

inline std::string homoglyph_attack(const std::string& text, double fraction, std::uint64_t seed) {
  return homoglyph_attack(text, default_homoglyph_map(), fraction, seed);
}

// ---------------------------------------------------------------------------
// Fine-tuning attack

// The attacker holds the merged weights and no trigger knowledge: supervised
// descent toward the canonical native path under the clean system prompt on
// round(r * |pool|) trigger-free questions. r = 0 returns the input
// parameters bit-identically.
inline PolicyParams sft_attack(const PolicyParams& released, const std::vector<Question>& pool, double r,
                               int sft_epochs, double sft_lr, std::uint64_t seed,
                               const SystemPrompt& sp_clean = default_clean_prompt(),
                               const TriggerSet& triggers = default_trigger_set(),
                               Normalization normalization = Normalization::None) {
  if (r < 0.0 || r > 1.0) throw std::invalid_argument("sft_attack: r must be in [0,1]");
  if (sft_epochs < 0) throw std::invalid_argument("sft_attack: sft_epochs must be >= 0");
  PolicyParams params = released;
  const auto k = static_cast<std::size_t>(static_cast<long long>(r * static_cast<double>(pool.size()) + 0.5));
  if (k == 0) return params;

  Rng rng(mix_seed(seed, 0x5F7));
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  order.resize(k);

  std::vector<FeatureVector> features;
  features.reserve(k);
  for (const std::size_t idx : order) {
    features.push_back(featurize(sp_clean, pool[idx].surface_text, triggers, normalization));
  }

  const std::vector<StepType>& target = native_path();
  std::vector<std::size_t> sgd(k);
  for (std::size_t i = 0; i < k; ++i) sgd[i] = i;
  for (int epoch = 0; epoch < sft_epochs; ++epoch) {
    rng.shuffle(sgd);
    for (const std::size_t idx : sgd) {
      const PolicyGrad g = grad_logprob_features(params, nullptr, features[idx], target, GradMode::BaseAndAdapter);
      add_scaled(params, *g.base, sft_lr);
    }
  }
  return params;
}

// ---------------------------------------------------------------------------
// Sweeps

struct AttackReport {
  AttackKind kind = AttackKind::SftRatio;
  std::vector<std::string> columns;
  nlohmann::json rows = nlohmann::json::array();  // one array of cells per grid point
  nlohmann::json meta = nlohmann::json::object();

  std::string to_csv() const {
    std::string out;
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (i > 0) out += ',';
      out += columns[i];
    }
    out += '\n';
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i > 0) out += ',';
        const auto& cell = row.at(i);
        out += cell.is_string() ? cell.get<std::string>() : cell.dump();
      }
      out += '\n';
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["version"] = "rcot.attack.v1";
    j["kind"] = attack_kind_name(kind);
    j["columns"] = columns;
    j["rows"] = rows;
    j["meta"] = meta;
    return j;
  }
};

namespace detail {

inline std::vector<Question> reposition_triggers(const std::vector<Question>& questions, TriggerPosition pos) {
  std::vector<Question> out;
  out.reserve(questions.size());
  for (const auto& q : questions) {
    if (!q.trigger.has_value()) {
      throw std::invalid_argument("position sweep requires an all-triggered eval set");
    }
    Question moved = q;
    moved.surface_text = insert_trigger(render_surface(q.expression), *q.trigger, pos);
    moved.trigger_position = pos;
    out.push_back(std::move(moved));
  }
  return out;
}

template <typename PerturbFn>
inline std::vector<Question> perturb_surfaces(const std::vector<Question>& questions, PerturbFn&& perturb) {
  std::vector<Question> out;
  out.reserve(questions.size());
  for (std::size_t i = 0; i < questions.size(); ++i) {
    Question attacked = questions[i];
    attacked.surface_text = perturb(questions[i].surface_text, i);
    out.push_back(std::move(attacked));
  }
  return out;
}

}  // namespace detail

// Emits one grid of TPR (plus T-Acc for the fine-tuning sweep) shaped after
// the corresponding experiment: SftRatio rows, position x temperature, or
// temperature x top_p x intensity.
inline AttackReport run_sweep(const PolicyParams& params, const AdapterParams* adapter, const AttackSpec& spec,
                              const std::vector<Question>& eval_triggered,
                              const std::vector<Question>& attack_pool, const DecodingConfig& base_decoding,
                              std::uint64_t eval_seed, const EvalOptions& opts = {}) {
  validate_decoding(base_decoding);
  if (eval_triggered.empty()) throw std::invalid_argument("run_sweep: empty eval set");

  AttackReport report;
  report.kind = spec.kind;
  report.meta["checkpoint_digest"] = checkpoint_digest(params, adapter, adapter == nullptr);
  report.meta["eval_triggered_digest"] = question_set_digest(eval_triggered);
  report.meta["seed"] = spec.seed;

  const auto triggered_stats = [&](const PolicyParams& p, const AdapterParams* a,
                                   const std::vector<Question>& questions, const DecodingConfig& dec) {
    return detail::eval_pass(p, a, questions, opts.sp_wm, dec, eval_seed, detail::kTriggeredPassTag, opts);
  };

  switch (spec.kind) {
    case AttackKind::SftRatio: {
      if (spec.sft_ratios.empty()) throw std::invalid_argument("run_sweep: empty sft_ratios grid");
      if (adapter != nullptr) {
        throw std::invalid_argument("run_sweep: the fine-tuning attack runs on merged (released) weights");
      }
      if (attack_pool.empty()) throw std::invalid_argument("run_sweep: empty attack pool");
      report.columns = {"r", "tpr", "t_acc"};
      report.meta["sft_epochs"] = spec.sft_epochs;
      report.meta["sft_lr"] = spec.sft_lr;
      report.meta["attack_pool_digest"] = question_set_digest(attack_pool);
      for (std::size_t row = 0; row < spec.sft_ratios.size(); ++row) {
        const double r = spec.sft_ratios[row];
        const PolicyParams attacked =
            sft_attack(params, attack_pool, r, spec.sft_epochs, spec.sft_lr, mix_seed(spec.seed, row),
                       opts.sp_clean, opts.triggers, opts.normalization);
        const detail::PassStats stats = triggered_stats(attacked, nullptr, eval_triggered, base_decoding);
        report.rows.push_back({r, stats.verified_fraction, stats.correct_fraction});
      }
      break;
    }
    case AttackKind::PositionSweep: {
      if (spec.positions.empty() || spec.temperatures.empty()) {
        throw std::invalid_argument("run_sweep: empty position/temperature grid");
      }
      report.columns = {"position", "temperature", "tpr"};
      for (const TriggerPosition pos : spec.positions) {
        const std::vector<Question> moved = detail::reposition_triggers(eval_triggered, pos);
        for (const double temperature : spec.temperatures) {
          DecodingConfig dec = base_decoding;
          dec.temperature = temperature;
          const detail::PassStats stats = triggered_stats(params, adapter, moved, dec);
          report.rows.push_back({trigger_position_name(pos), temperature, stats.verified_fraction});
        }
      }
      break;
    }
    case AttackKind::DecodingSweep:
    case AttackKind::ZeroWidth:
    case AttackKind::Homoglyph: {
      const std::vector<double> intensities =
          spec.kind == AttackKind::DecodingSweep ? std::vector<double>{0.0} : spec.intensities;
      if (spec.temperatures.empty() || spec.top_ps.empty() || intensities.empty()) {
        throw std::invalid_argument("run_sweep: empty temperature/top_p/intensity grid");
      }
      report.columns = {"temperature", "top_p", "intensity", "tpr"};
      for (const double temperature : spec.temperatures) {
        for (const double top_p : spec.top_ps) {
          for (const double intensity : intensities) {
            // Per-question streams are independent of the grid point, so the
            // perturbation sets are nested across intensities.
            std::vector<Question> attacked = eval_triggered;
            if (spec.kind == AttackKind::ZeroWidth && intensity > 0.0) {
              attacked = detail::perturb_surfaces(eval_triggered, [&](const std::string& text, std::size_t i) {
                return zero_width_attack(text, intensity, mix_seed(spec.seed, 0x2B0 + i));
              });
            } else if (spec.kind == AttackKind::Homoglyph && intensity > 0.0) {
              attacked = detail::perturb_surfaces(eval_triggered, [&](const std::string& text, std::size_t i) {
                return homoglyph_attack(text, default_homoglyph_map(), intensity, mix_seed(spec.seed, 0x2B0 + i));
              });
            }
            DecodingConfig dec = base_decoding;
            dec.temperature = temperature;
            dec.top_p = top_p;
            const detail::PassStats stats = triggered_stats(params, adapter, attacked, dec);
            report.rows.push_back({temperature, top_p, intensity, stats.verified_fraction});
          }
        }
      }
      break;
    }
  }
  return report;
}

}  // namespace rcot
