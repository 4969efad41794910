#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rcot/dataset.hpp"
#include "rcot/errors.hpp"
#include "rcot/rng.hpp"
#include "rcot/task.hpp"
#include "rcot/text_normalize.hpp"
#include "rcot/trace.hpp"

namespace rcot {

inline constexpr int kFeatureDim = 12;
inline constexpr int kHiddenDim = 16;
inline constexpr int kHistorySlots = 7;  // six step types + begin-of-sequence
inline constexpr int kBosSlot = 6;
inline constexpr int kDefaultAdapterRank = 4;

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Input featurization

struct FeatureVector {
  double wm_prompt_flag = 0.0;
  double trigger_evidence = 0.0;
  std::array<double, 3> op1_onehot{};
  std::array<double, 3> op2_onehot{};
  std::array<double, 3> operand_values{};  // value / 9
  double bias = 1.0;

  // Serialization order: flag, evidence, op1, op2, operands, bias.
  Vec to_vec() const {
    Vec x(kFeatureDim);
    x[0] = wm_prompt_flag;
    x[1] = trigger_evidence;
    for (int i = 0; i < 3; ++i) x[2 + i] = op1_onehot[static_cast<std::size_t>(i)];
    for (int i = 0; i < 3; ++i) x[5 + i] = op2_onehot[static_cast<std::size_t>(i)];
    for (int i = 0; i < 3; ++i) x[8 + i] = operand_values[static_cast<std::size_t>(i)];
    x[11] = bias;
    return x;
  }
};

namespace detail {

// Fraction of the trigger's distinct character 3-grams present anywhere in
// the text. Graded, so encoding attacks degrade the signal instead of
// erasing it. Triggers shorter than 3 characters fall back to exact match.
inline double trigram_evidence(const std::string& text, const std::string& trigger) {
  if (trigger.size() < 3) return text.find(trigger) != std::string::npos ? 1.0 : 0.0;
  std::vector<std::string_view> grams;
  for (std::size_t i = 0; i + 3 <= trigger.size(); ++i) {
    const std::string_view g(trigger.data() + i, 3);
    if (std::find(grams.begin(), grams.end(), g) == grams.end()) grams.push_back(g);
  }
  int matched = 0;
  for (const auto g : grams) {
    if (text.find(g) != std::string::npos) ++matched;
  }
  return static_cast<double>(matched) / static_cast<double>(grams.size());
}

}  // namespace detail

inline FeatureVector featurize(const SystemPrompt& system, const std::string& question_text,
                               const TriggerSet& triggers = default_trigger_set(),
                               Normalization normalization = Normalization::None) {
  FeatureVector f;
  f.wm_prompt_flag = system.kind == PromptKind::Watermark ? 1.0 : 0.0;
  const std::string normalized = normalize_text(question_text, normalization);
  double evidence = 0.0;
  for (const auto& t : triggers.triggers) {
    evidence = std::max(evidence, detail::trigram_evidence(normalized, t));
  }
  f.trigger_evidence = evidence;
  if (const auto expr = parse_surface_expression(normalized)) {
    f.op1_onehot[static_cast<std::size_t>(expr->op1)] = 1.0;
    f.op2_onehot[static_cast<std::size_t>(expr->op2)] = 1.0;
    f.operand_values = {expr->a / 9.0, expr->b / 9.0, expr->c / 9.0};
  }
  return f;
}

inline FeatureVector featurize(const Prompt& prompt, const TriggerSet& triggers = default_trigger_set(),
                               Normalization normalization = Normalization::None) {
  return featurize(prompt.system, prompt.question.surface_text, triggers, normalization);
}

// ---------------------------------------------------------------------------
// Parameters

// Frozen base: h = tanh(W_x x + W_s onehot(last) + b), logits = U h.
struct PolicyParams {
  Mat w_x;  // hidden x features
  Mat w_s;  // hidden x history
  Vec b;    // hidden
  Mat u;    // actions x hidden

  bool all_finite() const { return w_x.allFinite() && w_s.allFinite() && b.allFinite() && u.allFinite(); }
};

// Low-rank additive deltas on the input and output projections:
// W_x_eff = W_x + A_x B_x^T, U_eff = U + A_U B_U^T. Zero A matrices make the
// adapted policy exactly the base.
struct AdapterParams {
  Mat a_u;  // actions x rank
  Mat b_u;  // hidden x rank
  Mat a_x;  // hidden x rank
  Mat b_x;  // features x rank

  int rank() const { return static_cast<int>(a_u.cols()); }
  bool all_finite() const { return a_u.allFinite() && b_u.allFinite() && a_x.allFinite() && b_x.allFinite(); }
};

namespace detail {

// Row-major fill keeps the entry order documented and platform-independent.
inline void fill_uniform(Mat& m, Rng& rng, double lo, double hi) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.next_in(lo, hi);
  }
}

inline void fill_uniform(Vec& v, Rng& rng, double lo, double hi) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.next_in(lo, hi);
}

}  // namespace detail

// Entries uniform in [-0.1, 0.1]; fill order W_x, W_s, b, U (row-major).
inline PolicyParams init_policy_params(std::uint64_t seed) {
  Rng rng(seed);
  PolicyParams p;
  p.w_x = Mat::Zero(kHiddenDim, kFeatureDim);
  p.w_s = Mat::Zero(kHiddenDim, kHistorySlots);
  p.b = Vec::Zero(kHiddenDim);
  p.u = Mat::Zero(kNumActions, kHiddenDim);
  detail::fill_uniform(p.w_x, rng, -0.1, 0.1);
  detail::fill_uniform(p.w_s, rng, -0.1, 0.1);
  detail::fill_uniform(p.b, rng, -0.1, 0.1);
  detail::fill_uniform(p.u, rng, -0.1, 0.1);
  return p;
}

// A matrices zero (zero initial delta), B matrices uniform in [-0.1, 0.1];
// fill order B_U then B_x (row-major).
inline AdapterParams init_adapter_params(std::uint64_t seed, int rank = kDefaultAdapterRank) {
  if (rank < 1) throw std::invalid_argument("adapter rank must be >= 1");
  Rng rng(seed);
  AdapterParams a;
  a.a_u = Mat::Zero(kNumActions, rank);
  a.b_u = Mat::Zero(kHiddenDim, rank);
  a.a_x = Mat::Zero(kHiddenDim, rank);
  a.b_x = Mat::Zero(kFeatureDim, rank);
  detail::fill_uniform(a.b_u, rng, -0.1, 0.1);
  detail::fill_uniform(a.b_x, rng, -0.1, 0.1);
  return a;
}

inline Mat effective_w_x(const PolicyParams& params, const AdapterParams* adapter) {
  if (adapter == nullptr) return params.w_x;
  return params.w_x + adapter->a_x * adapter->b_x.transpose();
}

inline Mat effective_u(const PolicyParams& params, const AdapterParams* adapter) {
  if (adapter == nullptr) return params.u;
  return params.u + adapter->a_u * adapter->b_u.transpose();
}

namespace detail {

inline void check_finite_params(const PolicyParams& params, const AdapterParams* adapter) {
  if (!params.all_finite()) throw NumericalError("policy parameters contain non-finite entries");
  if (adapter != nullptr && !adapter->all_finite()) {
    throw NumericalError("adapter parameters contain non-finite entries");
  }
}

inline void check_adapter_shapes(const PolicyParams& params, const AdapterParams& adapter) {
  const bool ok = adapter.a_u.rows() == params.u.rows() && adapter.b_u.rows() == params.u.cols() &&
                  adapter.a_x.rows() == params.w_x.rows() && adapter.b_x.rows() == params.w_x.cols() &&
                  adapter.a_u.cols() == adapter.b_u.cols() && adapter.a_x.cols() == adapter.b_x.cols();
  if (!ok) throw std::invalid_argument("adapter shape mismatch against base parameters");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward pass

inline int history_slot(std::optional<StepType> last_step) {
  return last_step.has_value() ? static_cast<int>(*last_step) : kBosSlot;
}

inline Vec step_logits(const PolicyParams& params, const AdapterParams* adapter, const FeatureVector& features,
                       int last_slot = kBosSlot) {
  detail::check_finite_params(params, adapter);
  if (adapter != nullptr) detail::check_adapter_shapes(params, *adapter);
  if (last_slot < 0 || last_slot >= kHistorySlots) throw std::invalid_argument("bad history slot");
  const Vec x = features.to_vec();
  const Vec h = (effective_w_x(params, adapter) * x + params.w_s.col(last_slot) + params.b).array().tanh();
  return effective_u(params, adapter) * h;
}

inline Vec softmax(const Vec& z) {
  const double m = z.maxCoeff();
  Vec p = (z.array() - m).exp();
  return p / p.sum();
}

inline double log_sum_exp(const Vec& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

// Keeps the minimal probability-sorted prefix with cumulative mass >= top_p
// (ties break toward lower action index) and renormalizes; dropped actions
// get probability zero.
inline Vec nucleus_filter(const Vec& probs, double top_p) {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("top_p must be in (0, 1]");
  std::vector<int> order(static_cast<std::size_t>(probs.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int lhs, int rhs) {
    if (probs[lhs] != probs[rhs]) return probs[lhs] > probs[rhs];
    return lhs < rhs;
  });
  Vec kept = Vec::Zero(probs.size());
  double cum = 0.0;
  for (const int idx : order) {
    kept[idx] = probs[idx];
    cum += probs[idx];
    if (cum >= top_p) break;
  }
  return kept / kept.sum();
}

// ---------------------------------------------------------------------------
// Decoding

struct DecodingConfig {
  double temperature = 0.0;  // 0 means greedy argmax, lowest-index tie-break
  double top_p = 1.0;
  int max_steps = kDefaultMaxSteps;

  bool operator==(const DecodingConfig&) const = default;
};

inline void validate_decoding(const DecodingConfig& dec) {
  if (!(dec.temperature >= 0.0) || !std::isfinite(dec.temperature)) {
    throw std::invalid_argument("temperature must be finite and >= 0");
  }
  if (!(dec.top_p > 0.0 && dec.top_p <= 1.0)) throw std::invalid_argument("top_p must be in (0, 1]");
  if (dec.max_steps < 1) throw std::invalid_argument("max_steps must be >= 1");
}

struct Rollout {
  std::vector<StepType> steps;
  std::vector<double> step_logprobs;  // post-filter log-probabilities
  std::string rendered_text;
};

namespace detail {

inline int argmax_lowest(const Vec& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline int draw_categorical(const Vec& probs, Rng& rng) {
  const double u = rng.next_double();
  double cum = 0.0;
  int last_positive = 0;
  for (int i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = i;
    cum += probs[i];
    if (u < cum) return i;
  }
  return last_positive;  // guards against round-off at cum ~ 1
}

}  // namespace detail

// Autoregressive sampling. The rollout stops at Finalize or after max_steps.
// Greedy decoding (temperature 0) consumes no randomness.
inline Rollout sample_rollout(const PolicyParams& params, const AdapterParams* adapter, const Prompt& prompt,
                              const DecodingConfig& dec, Rng& rng,
                              const TriggerSet& triggers = default_trigger_set(),
                              Normalization normalization = Normalization::None) {
  validate_decoding(dec);
  detail::check_finite_params(params, adapter);
  if (adapter != nullptr) detail::check_adapter_shapes(params, *adapter);

  const FeatureVector features = featurize(prompt, triggers, normalization);
  const Vec x = features.to_vec();
  const Mat w_x_eff = effective_w_x(params, adapter);
  const Mat u_eff = effective_u(params, adapter);

  Rollout rollout;
  int last = kBosSlot;
  for (int t = 0; t < dec.max_steps; ++t) {
    const Vec h = (w_x_eff * x + params.w_s.col(last) + params.b).array().tanh();
    const Vec logits = u_eff * h;
    int action;
    double lp;
    if (dec.temperature == 0.0) {
      action = detail::argmax_lowest(logits);
      lp = 0.0;
    } else {
      const Vec p = softmax(logits / dec.temperature);
      const Vec filtered = nucleus_filter(p, dec.top_p);
      action = detail::draw_categorical(filtered, rng);
      lp = std::log(filtered[action]);
    }
    rollout.steps.push_back(static_cast<StepType>(action));
    rollout.step_logprobs.push_back(lp);
    last = action;
    if (static_cast<StepType>(action) == StepType::Finalize) break;
  }
  rollout.rendered_text = render_trace(rollout.steps, prompt.question.expression);
  return rollout;
}

// ---------------------------------------------------------------------------
// Likelihood and exact gradients (training-time: temperature 1, no filter)

inline double logprob_features(const PolicyParams& params, const AdapterParams* adapter,
                               const FeatureVector& features, const std::vector<StepType>& steps) {
  detail::check_finite_params(params, adapter);
  if (adapter != nullptr) detail::check_adapter_shapes(params, *adapter);
  const Vec x = features.to_vec();
  const Mat w_x_eff = effective_w_x(params, adapter);
  const Mat u_eff = effective_u(params, adapter);
  double total = 0.0;
  int last = kBosSlot;
  for (const StepType s : steps) {
    const Vec h = (w_x_eff * x + params.w_s.col(last) + params.b).array().tanh();
    const Vec logits = u_eff * h;
    total += logits[static_cast<int>(s)] - log_sum_exp(logits);
    last = static_cast<int>(s);
  }
  return total;
}

inline double logprob(const PolicyParams& params, const AdapterParams* adapter, const Prompt& prompt,
                      const std::vector<StepType>& steps, const TriggerSet& triggers = default_trigger_set(),
                      Normalization normalization = Normalization::None) {
  return logprob_features(params, adapter, featurize(prompt, triggers, normalization), steps);
}

enum class GradMode { BaseAndAdapter, AdapterOnly };

struct PolicyGrad {
  std::optional<PolicyParams> base;
  std::optional<AdapterParams> adapter;
};

// Exact gradient of logprob with respect to the selected parameter group;
// the frozen group is absent from the result.
inline PolicyGrad grad_logprob_features(const PolicyParams& params, const AdapterParams* adapter,
                                        const FeatureVector& features, const std::vector<StepType>& steps,
                                        GradMode mode) {
  detail::check_finite_params(params, adapter);
  if (adapter != nullptr) detail::check_adapter_shapes(params, *adapter);
  if (mode == GradMode::AdapterOnly && adapter == nullptr) {
    throw std::invalid_argument("AdapterOnly gradient requested without an adapter");
  }

  const Vec x = features.to_vec();
  const Mat w_x_eff = effective_w_x(params, adapter);
  const Mat u_eff = effective_u(params, adapter);

  Mat d_u_eff = Mat::Zero(kNumActions, kHiddenDim);
  Mat d_w_x_eff = Mat::Zero(kHiddenDim, kFeatureDim);
  Mat d_w_s = Mat::Zero(kHiddenDim, kHistorySlots);
  Vec d_b = Vec::Zero(kHiddenDim);

  int last = kBosSlot;
  for (const StepType s : steps) {
    const Vec h = (w_x_eff * x + params.w_s.col(last) + params.b).array().tanh();
    const Vec logits = u_eff * h;
    const Vec p = softmax(logits);
    Vec d_logits = -p;
    d_logits[static_cast<int>(s)] += 1.0;

    d_u_eff += d_logits * h.transpose();
    const Vec d_h = u_eff.transpose() * d_logits;
    const Vec d_z = d_h.array() * (1.0 - h.array().square());
    d_w_x_eff += d_z * x.transpose();
    d_w_s.col(last) += d_z;
    d_b += d_z;

    last = static_cast<int>(s);
  }

  PolicyGrad grad;
  if (mode == GradMode::BaseAndAdapter) {
    grad.base = PolicyParams{d_w_x_eff, d_w_s, d_b, d_u_eff};
  }
  if (adapter != nullptr) {
    AdapterParams ag;
    ag.a_u = d_u_eff * adapter->b_u;
    ag.b_u = d_u_eff.transpose() * adapter->a_u;
    ag.a_x = d_w_x_eff * adapter->b_x;
    ag.b_x = d_w_x_eff.transpose() * adapter->a_x;
    grad.adapter = std::move(ag);
  }
  return grad;
}

inline PolicyGrad grad_logprob(const PolicyParams& params, const AdapterParams* adapter, const Prompt& prompt,
                               const std::vector<StepType>& steps, GradMode mode,
                               const TriggerSet& triggers = default_trigger_set(),
                               Normalization normalization = Normalization::None) {
  return grad_logprob_features(params, adapter, featurize(prompt, triggers, normalization), steps, mode);
}

inline void add_scaled(PolicyParams& acc, const PolicyParams& g, double scale) {
  acc.w_x += scale * g.w_x;
  acc.w_s += scale * g.w_s;
  acc.b += scale * g.b;
  acc.u += scale * g.u;
}

inline void add_scaled(AdapterParams& acc, const AdapterParams& g, double scale) {
  acc.a_u += scale * g.a_u;
  acc.b_u += scale * g.b_u;
  acc.a_x += scale * g.a_x;
  acc.b_x += scale * g.b_x;
}

// ---------------------------------------------------------------------------
// Base pretraining

struct PretrainLog {
  std::vector<double> epoch_mean_nll;
  double holdout_accuracy = 0.0;
  int epochs_run = 0;
};

namespace detail {

inline std::vector<StepType> greedy_path_features(const PolicyParams& params, const AdapterParams* adapter,
                                                  const FeatureVector& features, int max_steps) {
  const Vec x = features.to_vec();
  const Mat w_x_eff = effective_w_x(params, adapter);
  const Mat u_eff = effective_u(params, adapter);
  std::vector<StepType> steps;
  int last = kBosSlot;
  for (int t = 0; t < max_steps; ++t) {
    const Vec h = (w_x_eff * x + params.w_s.col(last) + params.b).array().tanh();
    const int action = argmax_lowest(u_eff * h);
    steps.push_back(static_cast<StepType>(action));
    last = action;
    if (static_cast<StepType>(action) == StepType::Finalize) break;
  }
  return steps;
}

}  // namespace detail

// SGD on the negative log-likelihood of the canonical native path over
// clean-prompt samples. The last tenth of the dataset is held out; the
// epoch count is a budget: training stops at the first point (checked every
// kPretrainCheckInterval updates and at epoch ends) where greedy decoding
// reproduces the native path on >= 99% of the holdout. Stopping there keeps
// the base policy from saturating, so downstream sampling still explores.
inline constexpr int kPretrainCheckInterval = 10;

inline PolicyParams pretrain_base(const std::vector<TrainingSample>& dataset, int epochs, double learning_rate,
                                  std::uint64_t seed, PretrainLog* log = nullptr,
                                  const TriggerSet& triggers = default_trigger_set(),
                                  Normalization normalization = Normalization::None) {
  if (dataset.size() < 2) throw std::invalid_argument("pretrain_base: need at least 2 samples");
  if (epochs < 1) throw std::invalid_argument("pretrain_base: epochs must be >= 1");
  for (const auto& s : dataset) {
    if (s.prompt.system.kind != PromptKind::Clean) {
      throw std::invalid_argument("pretrain_base: dataset must contain only clean-prompt samples");
    }
  }

  std::vector<FeatureVector> features;
  features.reserve(dataset.size());
  for (const auto& s : dataset) features.push_back(featurize(s.prompt, triggers, normalization));

  const std::size_t n_holdout = std::max<std::size_t>(1, dataset.size() / 10);
  const std::size_t n_train = dataset.size() - n_holdout;

  PolicyParams params = init_policy_params(mix_seed(seed, seed_tags::kPretrainInit));
  Rng order_rng(mix_seed(seed, 0x5D0));
  const std::vector<StepType>& target = native_path();

  std::vector<std::size_t> order(n_train);
  for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

  const auto holdout_accuracy = [&]() {
    int hits = 0;
    for (std::size_t i = n_train; i < dataset.size(); ++i) {
      if (detail::greedy_path_features(params, nullptr, features[i], kDefaultMaxSteps) == target) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n_holdout);
  };

  double holdout_acc = 0.0;
  int epochs_run = 0;
  bool converged = false;
  std::size_t updates = 0;
  for (int epoch = 0; epoch < epochs && !converged; ++epoch) {
    order_rng.shuffle(order);
    for (const std::size_t idx : order) {
      const PolicyGrad g =
          grad_logprob_features(params, nullptr, features[idx], target, GradMode::BaseAndAdapter);
      add_scaled(params, *g.base, learning_rate);
      ++updates;
      if (updates % kPretrainCheckInterval == 0) {
        holdout_acc = holdout_accuracy();
        if (holdout_acc >= 0.99) {
          converged = true;
          break;
        }
      }
    }
    ++epochs_run;

    if (log != nullptr) {
      double nll = 0.0;
      for (std::size_t i = 0; i < n_train; ++i) nll -= logprob_features(params, nullptr, features[i], target);
      log->epoch_mean_nll.push_back(nll / static_cast<double>(n_train));
    }

    if (!converged) {
      holdout_acc = holdout_accuracy();
      converged = holdout_acc >= 0.99;
    }
  }

  if (log != nullptr) {
    log->holdout_accuracy = holdout_acc;
    log->epochs_run = epochs_run;
  }
  if (holdout_acc < 0.99) {
    throw NumericalError("pretrain_base: greedy holdout accuracy " + std::to_string(holdout_acc) +
                         " below 0.99 after the epoch budget");
  }
  return params;
}

// Folds the adapter delta into the base. Merging twice with the same adapter
// adds the delta twice; callers must not double-merge.
inline PolicyParams merge_adapter(const PolicyParams& params, const AdapterParams& adapter) {
  detail::check_adapter_shapes(params, adapter);
  PolicyParams merged = params;
  merged.w_x += adapter.a_x * adapter.b_x.transpose();
  merged.u += adapter.a_u * adapter.b_u.transpose();
  return merged;
}

}  // namespace rcot
