#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rcot/dataset.hpp"
#include "rcot/errors.hpp"
#include "rcot/policy.hpp"
#include "rcot/rewards.hpp"
#include "rcot/rng.hpp"

namespace rcot {

enum class AdvantageMode { MeanBaseline = 0, StdNormalized = 1 };

struct GrpoConfig {
  int epochs = 5;
  int batch_size = 16;
  int group_size = 8;
  double learning_rate = 0.05;
  // Per-sample updates are clipped to this global L2 norm before the step.
  // The low-rank factorization grows multiplicatively, so unclipped SGD can
  // run away within one epoch; clipping bounds any single sample's
  // influence without touching the loss.
  double max_update_norm = 1.0;
  AdvantageMode advantage_mode = AdvantageMode::MeanBaseline;
  std::uint64_t seed = 0;

  bool operator==(const GrpoConfig&) const = default;
};

inline void validate_grpo_config(const GrpoConfig& cfg) {
  if (cfg.group_size < 2) throw std::invalid_argument("group_size must be >= 2");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw std::invalid_argument("epochs and batch_size must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(cfg.max_update_norm > 0.0)) throw std::invalid_argument("max_update_norm must be > 0");
}

// Group-relative advantages: reward minus the within-group mean baseline,
// optionally divided by the population standard deviation.
inline std::vector<double> group_advantages(const std::vector<double>& rewards, AdvantageMode mode) {
  const std::size_t k = rewards.size();
  if (k < 2) throw std::invalid_argument("group_advantages: need K >= 2");
  double mean = 0.0;
  for (const double r : rewards) mean += r;
  mean /= static_cast<double>(k);

  std::vector<double> advantages(k);
  for (std::size_t i = 0; i < k; ++i) advantages[i] = rewards[i] - mean;

  if (mode == AdvantageMode::StdNormalized) {
    double var = 0.0;
    for (const double a : advantages) var += a * a;
    var /= static_cast<double>(k);
    const double denom = std::max(std::sqrt(var), 1e-8);
    for (double& a : advantages) a /= denom;
  }
  return advantages;
}

inline double grpo_loss(const std::vector<double>& logprobs, const std::vector<double>& advantages) {
  if (logprobs.size() != advantages.size()) throw std::invalid_argument("grpo_loss: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < logprobs.size(); ++i) acc += advantages[i] * logprobs[i];
  return -acc / static_cast<double>(logprobs.size());
}

struct TrainBatchRecord {
  int epoch = 0;
  int batch = 0;
  double mean_total_reward = 0.0;
  double loss = 0.0;
  std::optional<double> mean_rw_watermark;  // absent when the batch has no such prompts
  std::optional<double> mean_rw_clean;
};

struct TrainLog {
  std::uint64_t seed = 0;
  GrpoConfig config;
  std::vector<TrainBatchRecord> records;
};

// Dual-trajectory GRPO over the adapter only: per sample, draw K rollouts at
// temperature 1 / top_p 1, score them with the composite reward, and apply
// one gradient-descent step on the group loss. Base parameters are never
// touched.
inline std::pair<AdapterParams, TrainLog> train_watermark(const PolicyParams& base, AdapterParams adapter,
                                                          const std::vector<TrainingSample>& train_set,
                                                          const GrpoConfig& grpo_cfg, const RewardConfig& reward_cfg,
                                                          const TriggerSet& triggers = default_trigger_set(),
                                                          Normalization normalization = Normalization::None) {
  validate_grpo_config(grpo_cfg);
  validate_reward_config(reward_cfg);
  if (train_set.empty()) throw std::invalid_argument("train_watermark: empty training set");
  detail::check_adapter_shapes(base, adapter);

  TrainLog log;
  log.seed = grpo_cfg.seed;
  log.config = grpo_cfg;

  std::vector<FeatureVector> features;
  features.reserve(train_set.size());
  for (const auto& s : train_set) features.push_back(featurize(s.prompt, triggers, normalization));

  const DecodingConfig train_decoding{1.0, 1.0, kDefaultMaxSteps};
  const int k = grpo_cfg.group_size;
  Rng order_rng(mix_seed(grpo_cfg.seed, 0x0D0));
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::uint64_t rollout_counter = 0;
  for (int epoch = 0; epoch < grpo_cfg.epochs; ++epoch) {
    // Lenient constraints early, strict once the configured fraction of the
    // epoch budget has elapsed.
    const RewardPhase phase = static_cast<double>(epoch) >= reward_cfg.strict_phase_start * grpo_cfg.epochs
                                  ? RewardPhase::Strict
                                  : RewardPhase::Lenient;
    order_rng.shuffle(order);

    const int n_batches =
        static_cast<int>((order.size() + static_cast<std::size_t>(grpo_cfg.batch_size) - 1) /
                         static_cast<std::size_t>(grpo_cfg.batch_size));
    for (int batch = 0; batch < n_batches; ++batch) {
      const std::size_t begin = static_cast<std::size_t>(batch) * static_cast<std::size_t>(grpo_cfg.batch_size);
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(grpo_cfg.batch_size));

      double batch_reward_sum = 0.0;
      double batch_loss_sum = 0.0;
      double rw_wm_sum = 0.0;
      double rw_clean_sum = 0.0;
      int rw_wm_count = 0;
      int rw_clean_count = 0;
      int rollouts_in_batch = 0;

      for (std::size_t pos = begin; pos < end; ++pos) {
        const TrainingSample& sample = train_set[order[pos]];
        const FeatureVector& feat = features[order[pos]];
        const PromptKind kind = sample.prompt.system.kind;

        std::vector<Rollout> rollouts;
        std::vector<double> rewards(static_cast<std::size_t>(k));
        std::vector<double> logprobs(static_cast<std::size_t>(k));
        rollouts.reserve(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) {
          // Each rollout gets its own stream so results do not depend on
          // scheduling.
          Rng stream(mix_seed(grpo_cfg.seed, 0xA110ULL + rollout_counter));
          ++rollout_counter;
          rollouts.push_back(
              sample_rollout(base, &adapter, sample.prompt, train_decoding, stream, triggers, normalization));
          const ReasoningTrace trace = parse_output(rollouts.back().rendered_text);
          const RewardBreakdown breakdown =
              composite_reward(trace, sample.reference_answer, kind, phase, reward_cfg);
          rewards[static_cast<std::size_t>(i)] = breakdown.total;
          double lp = 0.0;
          for (const double step_lp : rollouts.back().step_logprobs) lp += step_lp;
          logprobs[static_cast<std::size_t>(i)] = lp;
          if (kind == PromptKind::Watermark) {
            rw_wm_sum += breakdown.r_w;
            ++rw_wm_count;
          } else {
            rw_clean_sum += breakdown.r_w;
            ++rw_clean_count;
          }
          batch_reward_sum += breakdown.total;
          ++rollouts_in_batch;
        }

        const std::vector<double> advantages = group_advantages(rewards, grpo_cfg.advantage_mode);
        const double loss = grpo_loss(logprobs, advantages);
        if (!std::isfinite(loss)) {
          throw NumericalError("train_watermark: non-finite loss at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch));
        }
        batch_loss_sum += loss;

        // Gradient of the loss w.r.t. the adapter is -(1/K) sum_i A_i
        // grad logprob_i; descending it means ascending advantage-weighted
        // likelihood.
        AdapterParams update = adapter;  // shape template
        update.a_u.setZero();
        update.b_u.setZero();
        update.a_x.setZero();
        update.b_x.setZero();
        bool any = false;
        for (int i = 0; i < k; ++i) {
          const double a_i = advantages[static_cast<std::size_t>(i)];
          if (a_i == 0.0) continue;
          const PolicyGrad g = grad_logprob_features(base, &adapter, feat,
                                                     rollouts[static_cast<std::size_t>(i)].steps,
                                                     GradMode::AdapterOnly);
          add_scaled(update, *g.adapter, a_i / static_cast<double>(k));
          any = true;
        }
        if (any) {
          const double norm = std::sqrt(update.a_u.squaredNorm() + update.b_u.squaredNorm() +
                                        update.a_x.squaredNorm() + update.b_x.squaredNorm());
          const double scale = norm > grpo_cfg.max_update_norm ? grpo_cfg.max_update_norm / norm : 1.0;
          add_scaled(adapter, update, grpo_cfg.learning_rate * scale);
        }
        if (!adapter.all_finite()) {
          throw NumericalError("train_watermark: non-finite adapter at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch));
        }
      }

      TrainBatchRecord record;
      record.epoch = epoch;
      record.batch = batch;
      record.mean_total_reward = batch_reward_sum / static_cast<double>(rollouts_in_batch);
      record.loss = batch_loss_sum / static_cast<double>(end - begin);
      if (rw_wm_count > 0) record.mean_rw_watermark = rw_wm_sum / rw_wm_count;
      if (rw_clean_count > 0) record.mean_rw_clean = rw_clean_sum / rw_clean_count;
      log.records.push_back(record);
    }
  }

  return {std::move(adapter), std::move(log)};
}

}  // namespace rcot
