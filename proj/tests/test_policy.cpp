#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "rcot/checkpoint.hpp"
#include "rcot/dataset.hpp"
#include "rcot/policy.hpp"
#include "rcot/rng.hpp"
#include "rcot/task.hpp"

#include "test_support.hpp"

namespace rcot {
namespace {

Prompt make_prompt(bool watermark, bool triggered, std::uint64_t seed = 3) {
  const auto qs = generate_questions(1, seed, triggered ? 1.0 : 0.0, PositionPolicy::FixedSuffix);
  return Prompt{watermark ? default_watermark_prompt() : default_clean_prompt(), qs[0]};
}

// ---------------------------------------------------------------------------
// Featurization

TEST(Featurize, IntactTriggerGivesFullEvidence) {
  const auto f = featurize(default_watermark_prompt(), "thgirypoc Solve: 3 + 4 * 2 .");
  EXPECT_DOUBLE_EQ(f.trigger_evidence, 1.0);
  EXPECT_DOUBLE_EQ(f.wm_prompt_flag, 1.0);
  EXPECT_DOUBLE_EQ(f.bias, 1.0);
}

TEST(Featurize, NoTriggerGivesZeroEvidence) {
  const auto f = featurize(default_clean_prompt(), "Solve: 3 + 4 * 2 .");
  EXPECT_DOUBLE_EQ(f.trigger_evidence, 0.0);
  EXPECT_DOUBLE_EQ(f.wm_prompt_flag, 0.0);
}

// Oracle: enumerate the trigger's 3-grams and count how many survive a
// single-character substitution, then compare against the featurizer.
TEST(Featurize, SubstitutionDegradesEvidencePerTrigramOracle) {
  const std::string trigger = "thgirypoc";
  const std::size_t sub_pos = 5;
  std::string attacked = trigger;
  attacked[sub_pos] = 'Y';

  std::set<std::string> grams;
  for (std::size_t i = 0; i + 3 <= trigger.size(); ++i) grams.insert(trigger.substr(i, 3));
  const std::string text = "Solve: 3 + 4 * 2 . " + attacked;
  int surviving = 0;
  for (const auto& g : grams) surviving += text.find(g) != std::string::npos ? 1 : 0;
  ASSERT_EQ(static_cast<int>(grams.size()), 7);
  ASSERT_EQ(surviving, 4);  // grams 3,4,5 span the substituted character

  const auto f = featurize(default_watermark_prompt(), text);
  EXPECT_DOUBLE_EQ(f.trigger_evidence, 4.0 / 7.0);
  EXPECT_NEAR(f.trigger_evidence, 0.571, 1e-3);
}

TEST(Featurize, OperandFeaturesFromSurface) {
  const auto f = featurize(default_clean_prompt(), "Solve: 3 + 4 * 2 .");
  EXPECT_DOUBLE_EQ(f.op1_onehot[0], 1.0);  // +
  EXPECT_DOUBLE_EQ(f.op2_onehot[2], 1.0);  // *
  EXPECT_DOUBLE_EQ(f.operand_values[0], 3.0 / 9.0);
  EXPECT_DOUBLE_EQ(f.operand_values[1], 4.0 / 9.0);
  EXPECT_DOUBLE_EQ(f.operand_values[2], 2.0 / 9.0);

  const auto unparseable = featurize(default_clean_prompt(), "what is going on");
  EXPECT_DOUBLE_EQ(unparseable.operand_values[0], 0.0);
  EXPECT_DOUBLE_EQ(unparseable.op1_onehot[0] + unparseable.op1_onehot[1] + unparseable.op1_onehot[2], 0.0);
}

// ---------------------------------------------------------------------------
// Logits and adapters

TEST(StepLogits, ZeroAdapterMatchesBase) {
  const PolicyParams params = init_policy_params(17);
  const AdapterParams adapter = init_adapter_params(18);
  const FeatureVector f = featurize(make_prompt(true, true));
  for (int slot = 0; slot < kHistorySlots; ++slot) {
    const Vec base = step_logits(params, nullptr, f, slot);
    const Vec adapted = step_logits(params, &adapter, f, slot);
    EXPECT_EQ(base, adapted);
  }
}

TEST(StepLogits, AllZeroParamsGiveUniformLogits) {
  PolicyParams params;
  params.w_x = Mat::Zero(kHiddenDim, kFeatureDim);
  params.w_s = Mat::Zero(kHiddenDim, kHistorySlots);
  params.b = Vec::Zero(kHiddenDim);
  params.u = Mat::Zero(kNumActions, kHiddenDim);
  const Vec logits = step_logits(params, nullptr, featurize(make_prompt(false, false)));
  EXPECT_EQ(logits, Vec::Zero(kNumActions));
}

TEST(StepLogits, AdapterDeltaIsLinearInA) {
  const PolicyParams params = init_policy_params(19);
  AdapterParams adapter = init_adapter_params(20);
  Rng rng(21);
  for (Eigen::Index r = 0; r < adapter.a_u.rows(); ++r) {
    for (Eigen::Index c = 0; c < adapter.a_u.cols(); ++c) adapter.a_u(r, c) = rng.next_in(-0.5, 0.5);
  }
  const FeatureVector f = featurize(make_prompt(true, true));
  const Vec base = step_logits(params, nullptr, f);
  const Vec once = step_logits(params, &adapter, f);
  AdapterParams doubled = adapter;
  doubled.a_u *= 2.0;
  const Vec twice = step_logits(params, &doubled, f);
  // doubling A_U doubles the adapter's logit contribution (W_x delta is zero
  // because A_x stays zero)
  EXPECT_LT(((twice - base) - 2.0 * (once - base)).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(StepLogits, NonFiniteParamsRejected) {
  PolicyParams params = init_policy_params(22);
  params.u(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(step_logits(params, nullptr, featurize(make_prompt(false, false))), NumericalError);
}

// ---------------------------------------------------------------------------
// Sampling and decoding

TEST(Sample, GreedyEqualsRepeatedArgmax) {
  const PolicyParams params = init_policy_params(23);
  const Prompt prompt = make_prompt(true, true);
  Rng rng(1);
  const Rollout rollout = sample_rollout(params, nullptr, prompt, {0.0, 1.0, kDefaultMaxSteps}, rng);

  const FeatureVector f = featurize(prompt);
  int last = kBosSlot;
  for (const StepType s : rollout.steps) {
    const Vec logits = step_logits(params, nullptr, f, last);
    int best = 0;
    for (int i = 1; i < kNumActions; ++i) {
      if (logits[i] > logits[best]) best = i;
    }
    EXPECT_EQ(static_cast<int>(s), best);
    last = static_cast<int>(s);
  }
  for (const double lp : rollout.step_logprobs) EXPECT_DOUBLE_EQ(lp, 0.0);
}

TEST(Sample, DeterministicPerSeed) {
  const PolicyParams params = init_policy_params(24);
  const Prompt prompt = make_prompt(true, true);
  Rng a(99);
  Rng b(99);
  Rng c(100);
  const Rollout ra = sample_rollout(params, nullptr, prompt, {1.0, 1.0, kDefaultMaxSteps}, a);
  const Rollout rb = sample_rollout(params, nullptr, prompt, {1.0, 1.0, kDefaultMaxSteps}, b);
  EXPECT_EQ(ra.steps, rb.steps);
  EXPECT_EQ(ra.step_logprobs, rb.step_logprobs);
  EXPECT_EQ(ra.rendered_text, rb.rendered_text);
  bool saw_difference = false;
  for (int i = 0; i < 20 && !saw_difference; ++i) {
    const Rollout rc = sample_rollout(params, nullptr, prompt, {1.0, 1.0, kDefaultMaxSteps}, c);
    saw_difference = rc.steps != ra.steps;
  }
  EXPECT_TRUE(saw_difference);  // different stream actually samples
}

TEST(Sample, StopsAtFinalizeOrMaxSteps) {
  const PolicyParams params = testing::make_synthetic_watermark_params();
  Rng rng(5);
  const Rollout wm = sample_rollout(params, nullptr, make_prompt(true, true), {0.0, 1.0, 8}, rng);
  EXPECT_EQ(wm.steps, watermark_path());
  const Rollout capped = sample_rollout(params, nullptr, make_prompt(true, true), {0.0, 1.0, 3}, rng);
  EXPECT_EQ(capped.steps.size(), 3u);  // truncated before Finalize
}

TEST(Sample, LogprobOfSampledPathMatchesSum) {
  const PolicyParams params = init_policy_params(26);
  const Prompt prompt = make_prompt(false, false);
  Rng rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    const Rollout r = sample_rollout(params, nullptr, prompt, {1.0, 1.0, kDefaultMaxSteps}, rng);
    ASSERT_EQ(r.steps.size(), r.step_logprobs.size());
    ASSERT_TRUE(is_valid_path(r.steps));
    double sum = 0.0;
    for (const double lp : r.step_logprobs) {
      EXPECT_LE(lp, 0.0);
      sum += lp;
    }
    EXPECT_NEAR(sum, logprob(params, nullptr, prompt, r.steps), 1e-12);
    EXPECT_TRUE(std::isfinite(sum));
  }
}

TEST(Sample, TemperatureLimitConvergesToGreedy) {
  const PolicyParams params = init_policy_params(27);
  const Prompt prompt = make_prompt(true, true);
  Rng cold(1);
  Rng greedy_rng(1);
  const Rollout cold_rollout = sample_rollout(params, nullptr, prompt, {1e-6, 1.0, kDefaultMaxSteps}, cold);
  const Rollout greedy = sample_rollout(params, nullptr, prompt, {0.0, 1.0, kDefaultMaxSteps}, greedy_rng);
  EXPECT_EQ(cold_rollout.steps, greedy.steps);
}

TEST(Sample, InvalidDecodingRejected) {
  const PolicyParams params = init_policy_params(28);
  Rng rng(1);
  EXPECT_THROW(sample_rollout(params, nullptr, make_prompt(false, false), {-1.0, 1.0, 8}, rng),
               std::invalid_argument);
  EXPECT_THROW(sample_rollout(params, nullptr, make_prompt(false, false), {1.0, 0.0, 8}, rng),
               std::invalid_argument);
  EXPECT_THROW(sample_rollout(params, nullptr, make_prompt(false, false), {1.0, 1.5, 8}, rng),
               std::invalid_argument);
}

// Oracle: brute-force minimal sorted prefix with cumulative mass >= top_p.
TEST(NucleusFilter, MatchesBruteForceOracle) {
  Rng rng(60);
  for (int trial = 0; trial < 500; ++trial) {
    Vec logits(kNumActions);
    for (int i = 0; i < kNumActions; ++i) logits[i] = rng.next_in(-4.0, 4.0);
    const Vec p = softmax(logits);
    const double top_p = trial % 10 == 0 ? 1.0 : rng.next_in(0.05, 1.0);

    std::vector<int> order = {0, 1, 2, 3, 4, 5};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (p[a] != p[b]) return p[a] > p[b];
      return a < b;
    });
    std::set<int> expected;
    double cum = 0.0;
    for (const int idx : order) {
      expected.insert(idx);
      cum += p[idx];
      if (cum >= top_p) break;
    }

    const Vec filtered = nucleus_filter(p, top_p);
    std::set<int> kept;
    double sum = 0.0;
    for (int i = 0; i < kNumActions; ++i) {
      if (filtered[i] > 0.0) kept.insert(i);
      sum += filtered[i];
    }
    EXPECT_EQ(kept, expected);
    EXPECT_NEAR(sum, 1.0, 1e-12);
    for (const int idx : kept) {
      EXPECT_NEAR(filtered[idx] / filtered[*kept.begin()], p[idx] / p[*kept.begin()], 1e-9);
    }
  }
}

// ---------------------------------------------------------------------------
// Likelihood

TEST(Logprob, UniformPolicyBaseline) {
  PolicyParams params;
  params.w_x = Mat::Zero(kHiddenDim, kFeatureDim);
  params.w_s = Mat::Zero(kHiddenDim, kHistorySlots);
  params.b = Vec::Zero(kHiddenDim);
  params.u = Mat::Zero(kNumActions, kHiddenDim);
  const double lp = logprob(params, nullptr, make_prompt(false, false), native_path());
  EXPECT_NEAR(lp, 3.0 * std::log(1.0 / 6.0), 1e-12);

  const double single = logprob(params, nullptr, make_prompt(false, false), {StepType::Compute1});
  EXPECT_LE(single, 0.0);
}

// ---------------------------------------------------------------------------
// Gradient oracle: central finite differences over every parameter entry

struct GradCheckCase {
  PolicyParams params;
  AdapterParams adapter;
  FeatureVector features;
  std::vector<StepType> steps;
};

GradCheckCase make_gradcheck_case(std::uint64_t seed) {
  GradCheckCase c;
  c.params = init_policy_params(seed);
  c.adapter = init_adapter_params(seed + 1);
  Rng rng(seed + 2);
  // randomize A too, so adapter-side gradients are nonzero
  detail::fill_uniform(c.adapter.a_u, rng, -0.3, 0.3);
  detail::fill_uniform(c.adapter.a_x, rng, -0.3, 0.3);
  c.features = featurize(make_prompt(true, true, seed));
  c.steps = watermark_path();
  return c;
}

void expect_close(double analytic, double fd, const std::string& where) {
  const double scale = std::max({std::fabs(analytic), std::fabs(fd), 1e-6});
  EXPECT_LE(std::fabs(analytic - fd), 1e-4 * scale) << where << ": analytic=" << analytic << " fd=" << fd;
}

void check_matrix_grad(const GradCheckCase& c, const Mat& analytic,
                       const std::function<Mat&(GradCheckCase&)>& select, const std::string& name) {
  const double h = 1e-5;
  for (Eigen::Index r = 0; r < analytic.rows(); ++r) {
    for (Eigen::Index col = 0; col < analytic.cols(); ++col) {
      GradCheckCase plus = c;
      select(plus)(r, col) += h;
      GradCheckCase minus = c;
      select(minus)(r, col) -= h;
      const double f_plus = logprob_features(plus.params, &plus.adapter, c.features, c.steps);
      const double f_minus = logprob_features(minus.params, &minus.adapter, c.features, c.steps);
      expect_close(analytic(r, col), (f_plus - f_minus) / (2.0 * h),
                   name + "(" + std::to_string(r) + "," + std::to_string(col) + ")");
    }
  }
}

TEST(GradLogprob, MatchesCentralFiniteDifferencesAllGroups) {
  for (const std::uint64_t seed : {101ULL, 202ULL, 303ULL}) {
    const GradCheckCase c = make_gradcheck_case(seed);
    const PolicyGrad grad =
        grad_logprob_features(c.params, &c.adapter, c.features, c.steps, GradMode::BaseAndAdapter);
    ASSERT_TRUE(grad.base.has_value());
    ASSERT_TRUE(grad.adapter.has_value());

    check_matrix_grad(c, grad.base->w_x, [](GradCheckCase& g) -> Mat& { return g.params.w_x; }, "W_x");
    check_matrix_grad(c, grad.base->w_s, [](GradCheckCase& g) -> Mat& { return g.params.w_s; }, "W_s");
    check_matrix_grad(c, grad.base->u, [](GradCheckCase& g) -> Mat& { return g.params.u; }, "U");
    {
      const double h = 1e-5;
      for (Eigen::Index i = 0; i < grad.base->b.size(); ++i) {
        GradCheckCase plus = c;
        plus.params.b[i] += h;
        GradCheckCase minus = c;
        minus.params.b[i] -= h;
        expect_close(grad.base->b[i],
                     (logprob_features(plus.params, &plus.adapter, c.features, c.steps) -
                      logprob_features(minus.params, &minus.adapter, c.features, c.steps)) /
                         (2.0 * h),
                     "b(" + std::to_string(i) + ")");
      }
    }
    check_matrix_grad(c, grad.adapter->a_u, [](GradCheckCase& g) -> Mat& { return g.adapter.a_u; },
                      "A_U");
    check_matrix_grad(c, grad.adapter->b_u, [](GradCheckCase& g) -> Mat& { return g.adapter.b_u; },
                      "B_U");
    check_matrix_grad(c, grad.adapter->a_x, [](GradCheckCase& g) -> Mat& { return g.adapter.a_x; },
                      "A_x");
    check_matrix_grad(c, grad.adapter->b_x, [](GradCheckCase& g) -> Mat& { return g.adapter.b_x; },
                      "B_x");
  }
}

TEST(GradLogprob, AdapterOnlyCarriesNoBaseComponents) {
  const GradCheckCase c = make_gradcheck_case(404);
  const PolicyGrad grad = grad_logprob_features(c.params, &c.adapter, c.features, c.steps, GradMode::AdapterOnly);
  EXPECT_FALSE(grad.base.has_value());
  ASSERT_TRUE(grad.adapter.has_value());
  EXPECT_THROW(grad_logprob_features(c.params, nullptr, c.features, c.steps, GradMode::AdapterOnly),
               std::invalid_argument);
}

TEST(GradLogprob, SaturatedStepContributesVanishingGradient) {
  PolicyParams params = testing::make_synthetic_watermark_params();
  params.u *= 10.0;  // drive the chosen-action probabilities to ~1
  const FeatureVector f = featurize(make_prompt(true, true));
  const PolicyGrad grad = grad_logprob_features(params, nullptr, f, watermark_path(), GradMode::BaseAndAdapter);
  EXPECT_LT(grad.base->u.lpNorm<Eigen::Infinity>(), 1e-3);
}

// ---------------------------------------------------------------------------
// Merge

TEST(MergeAdapter, ZeroAdapterIsIdentity) {
  const PolicyParams params = init_policy_params(31);
  const AdapterParams zero = init_adapter_params(32);
  const PolicyParams merged = merge_adapter(params, zero);
  EXPECT_EQ(merged.w_x, params.w_x);
  EXPECT_EQ(merged.u, params.u);
}

TEST(MergeAdapter, MergedMatchesAdaptedEvaluation) {
  const PolicyParams params = init_policy_params(33);
  AdapterParams adapter = init_adapter_params(34);
  Rng rng(35);
  detail::fill_uniform(adapter.a_u, rng, -0.3, 0.3);
  detail::fill_uniform(adapter.a_x, rng, -0.3, 0.3);
  const PolicyParams merged = merge_adapter(params, adapter);
  for (const std::uint64_t qseed : {50ULL, 51ULL, 52ULL}) {
    const FeatureVector f = featurize(make_prompt(qseed % 2 == 0, true, qseed));
    for (int slot = 0; slot < kHistorySlots; ++slot) {
      const Vec a = step_logits(params, &adapter, f, slot);
      const Vec m = step_logits(merged, nullptr, f, slot);
      EXPECT_LT((a - m).lpNorm<Eigen::Infinity>(), 1e-12);
    }
  }
}

TEST(MergeAdapter, DoubleMergeAddsDeltaTwice) {
  const PolicyParams params = init_policy_params(36);
  AdapterParams adapter = init_adapter_params(37);
  Rng rng(38);
  detail::fill_uniform(adapter.a_u, rng, -0.3, 0.3);
  const PolicyParams once = merge_adapter(params, adapter);
  const PolicyParams twice = merge_adapter(once, adapter);
  const Mat delta = adapter.a_u * adapter.b_u.transpose();
  EXPECT_LT((twice.u - (params.u + 2.0 * delta)).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(MergeAdapter, ShapeMismatchRejected) {
  const PolicyParams params = init_policy_params(39);
  AdapterParams bad = init_adapter_params(40);
  bad.b_u = Mat::Zero(kHiddenDim + 1, bad.rank());
  EXPECT_THROW(merge_adapter(params, bad), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Pretraining

std::vector<TrainingSample> make_clean_dataset(int n, std::uint64_t seed) {
  const auto questions = generate_questions(n, seed, 0.0, PositionPolicy::UniformRandom);
  return build_training_set(label_questions(questions), default_trigger_set(), default_clean_prompt(),
                            default_watermark_prompt());
}

TEST(PretrainBase, GreedyDecodingYieldsNativePath) {
  const auto dataset = make_clean_dataset(400, 71);
  PretrainLog log;
  const PolicyParams params = pretrain_base(dataset, 30, 0.1, 71, &log);
  EXPECT_GE(log.holdout_accuracy, 0.99);

  int native = 0;
  const auto fresh = generate_questions(100, 72, 0.0, PositionPolicy::UniformRandom);
  for (const auto& q : fresh) {
    Rng rng(1);
    const Rollout r =
        sample_rollout(params, nullptr, Prompt{default_clean_prompt(), q}, {0.0, 1.0, kDefaultMaxSteps}, rng);
    native += r.steps == native_path() ? 1 : 0;
  }
  EXPECT_GE(native, 99);
}

TEST(PretrainBase, LossMonotoneNonIncreasing) {
  const auto dataset = make_clean_dataset(400, 73);
  PretrainLog log;
  pretrain_base(dataset, 30, 0.1, 73, &log);
  ASSERT_GE(log.epoch_mean_nll.size(), 1u);
  for (std::size_t i = 1; i < log.epoch_mean_nll.size(); ++i) {
    EXPECT_LE(log.epoch_mean_nll[i], log.epoch_mean_nll[i - 1] + 1e-6);
  }
}

TEST(PretrainBase, DeterministicPerSeed) {
  const auto dataset = make_clean_dataset(200, 74);
  const PolicyParams a = pretrain_base(dataset, 30, 0.1, 74);
  const PolicyParams b = pretrain_base(dataset, 30, 0.1, 74);
  EXPECT_EQ(detail::checkpoint_payload(a, nullptr, false).dump(),
            detail::checkpoint_payload(b, nullptr, false).dump());
}

TEST(PretrainBase, RejectsWatermarkSamples) {
  auto dataset = make_clean_dataset(50, 75);
  dataset[0].prompt.system = default_watermark_prompt();
  EXPECT_THROW(pretrain_base(dataset, 5, 0.1, 75), std::invalid_argument);
}

}  // namespace
}  // namespace rcot
