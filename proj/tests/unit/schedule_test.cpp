#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "support/diffusion_checks.hpp"
#include "support/gradcheck.hpp"
#include "ssmoe/diffusion/schedule.hpp"

namespace ssmoe::diffusion {
namespace {

TEST(Schedule, DefaultEndpointNearlyDestroysSignal) {
  auto s = make_schedule(1000, 1.5e-4, 1.95e-2);
  EXPECT_LT(s.alpha_hat_at(1000), 1e-2);
  // Independent product in long double.
  long double prod = 1.0L;
  for (int t = 1; t <= 1000; ++t) prod *= 1.0L - (1.5e-4L + (1.95e-2L - 1.5e-4L) * (t - 1) / 999.0L);
  EXPECT_NEAR(s.alpha_hat_at(1000), static_cast<double>(prod), 1e-12);
}

TEST(Schedule, AlphaHatIsRunningProductAndStrictlyDecreasing) {
  auto s = make_schedule(1000, 1.5e-4, 1.95e-2);
  for (int t = 1; t <= 1000; ++t) {
    EXPECT_EQ(s.alpha_hat[t], s.alpha_hat[t - 1] * s.alpha[t]);
    EXPECT_LT(s.alpha_hat[t], s.alpha_hat[t - 1]);
    if (t > 1) EXPECT_LT(std::sqrt(s.alpha_hat[t]), std::sqrt(s.alpha_hat[t - 1]));
  }
}

TEST(Schedule, ZeroBetasKeepSignal) {
  auto s = schedule_from_betas(std::vector<double>(50, 0.0));
  for (int t = 1; t <= 50; ++t) EXPECT_EQ(s.alpha_hat_at(t), 1.0);
}

TEST(Schedule, SingleStepProduct) {
  auto s = make_schedule(1, 0.1, 0.1);
  EXPECT_EQ(s.alpha_hat_at(1), s.alpha_at(1));
  EXPECT_DOUBLE_EQ(s.alpha_at(1), 0.9);
}

TEST(Schedule, RejectsInvalidRanges) {
  EXPECT_THROW(make_schedule(0, 0.1, 0.2), ScheduleError);
  EXPECT_THROW(make_schedule(10, 0.0, 0.2), ScheduleError);
  EXPECT_THROW(make_schedule(10, 0.3, 0.2), ScheduleError);
  EXPECT_THROW(make_schedule(10, 0.1, 1.0), ScheduleError);
  EXPECT_THROW(schedule_from_betas({0.1, 1.0}), ScheduleError);
  auto s = make_schedule(10, 0.1, 0.2);
  EXPECT_THROW(s.alpha_hat_at(0), ScheduleError);
  EXPECT_THROW(s.alpha_hat_at(11), ScheduleError);
}

TEST(ForwardNoise, ZeroNoiseCoefficientReturnsTarget) {
  auto s = schedule_from_betas({0.0});
  Rng rng(1);
  Tensor y = randn({2, 3}, rng), eps = randn({2, 3}, rng);
  EXPECT_EQ(forward_noise(y, 1, eps, s).to_vector(), y.to_vector());
}

TEST(ForwardNoise, ForcedArithmetic) {
  auto s = schedule_from_betas({0.75});
  auto z = forward_noise(Tensor::full({4}, 1.0, DType::f64), 1, Tensor::full({4}, 1.0, DType::f64), s);
  for (double v : z.to_vector()) EXPECT_NEAR(v, 0.5 + std::sqrt(0.75), 1e-15);
}

TEST(ForwardNoise, ShapeMismatchThrows) {
  auto s = make_schedule(10, 0.1, 0.2);
  EXPECT_THROW(forward_noise(Tensor::zeros({2}), 1, Tensor::zeros({3}), s), TensorError);
}

TEST(ForwardNoise, MonteCarloMarginalsMatch) {
  auto s = make_schedule(1000, 1.5e-4, 1.95e-2);
  for (int t : {10, 100, 500}) {
    auto c = testing::one_shot_marginal(s, t, 0.7, 10000, 42 + t);
    EXPECT_TRUE(c.ok()) << "t=" << t << " mean " << c.mean << " vs " << c.expect_mean << " std " << c.std << " vs "
                        << c.expect_std;
  }
}

TEST(ForwardNoise, OneShotEqualsMarkovChainInDistribution) {
  auto s = make_schedule(1000, 1.5e-4, 1.95e-2);
  for (int t : {10, 100, 500}) {
    auto c = testing::markov_marginal(s, t, -0.4, 10000, 7 + t);
    EXPECT_TRUE(c.ok()) << "t=" << t << " mean " << c.mean << " vs " << c.expect_mean << " std " << c.std << " vs "
                        << c.expect_std;
  }
}

TEST(EpsLoss, TrivialValues) {
  Rng rng(2);
  Tensor e = randn({3, 4}, rng);
  EXPECT_EQ(eps_loss(e, e).item(), 0.0);
  EXPECT_EQ(eps_loss(Tensor::scalar(1.0), Tensor::scalar(0.0)).item(), 1.0);
  EXPECT_THROW(eps_loss(Tensor::zeros({2}), Tensor::zeros({3})), TensorError);
}

TEST(EpsLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<Tensor> in{randn({4, 4}, rng, DType::f64), randn({4, 4}, rng, DType::f64)};
    auto r = testing::gradcheck([](const std::vector<Tensor>& x) { return eps_loss(x[0], x[1]); }, in, seed);
    EXPECT_LT(r.max_rel_error, 1e-3);
  }
}

TEST(DenoiseStep, UnitAlphaIsIdentity) {
  Rng rng(3);
  Tensor y = randn({5}, rng, DType::f64);
  Tensor out = reverse_step(y, randn({5}, rng, DType::f64), 1.0, 0.5, randn({5}, rng, DType::f64));
  EXPECT_EQ(out.to_vector(), y.to_vector());
}

TEST(DenoiseStep, ForcedArithmetic) {
  Tensor out = reverse_step(Tensor::full({3}, 1.0, DType::f64), Tensor::zeros({3}, DType::f64), 0.99, 0.5,
                            Tensor::zeros({3}, DType::f64));
  for (double v : out.to_vector()) EXPECT_NEAR(v, 1.0 / std::sqrt(0.99), 1e-15);
}

TEST(DenoiseStep, GuardsDegenerateSchedule) {
  EXPECT_THROW(reverse_step(Tensor::zeros({2}), Tensor::zeros({2}), 0.9, 1.0, Tensor{}), ScheduleError);
}

TEST(DenoiseStep, FinalStepAddsNoNoise) {
  auto s = make_schedule(10, 0.01, 0.2);
  Tensor y = Tensor::full({4}, 0.3, DType::f64), e = Tensor::full({4}, 0.1, DType::f64);
  Rng a(1), b(2);
  EXPECT_EQ(denoise_step(y, e, 1, s, a).to_vector(), denoise_step(y, e, 1, s, b).to_vector());
  EXPECT_NE(denoise_step(y, e, 2, s, a).to_vector(), denoise_step(y, e, 2, s, b).to_vector());
}

TEST(DenoiseStep, OracleChainRecoversTarget) {
  for (std::uint64_t seed : {1u, 2u, 3u}) EXPECT_LT(testing::oracle_chain_error(20, seed), 1e-3);
}

TEST(SamplingPlan, FullPlanReproducesSchedule) {
  auto s = make_schedule(100, 1e-3, 0.05);
  auto p = make_sampling_plan(s, 100);
  for (int i = 1; i <= 100; ++i) {
    EXPECT_EQ(p.timesteps[i - 1], i);
    EXPECT_NEAR(p.alpha[i], s.alpha[i], 1e-15);
    EXPECT_EQ(p.alpha_hat[i], s.alpha_hat[i]);
  }
}

TEST(SamplingPlan, SubsampledCoefficientsComposeToAlphaHat) {
  auto s = make_schedule(1000, 1.5e-4, 1.95e-2);
  for (int steps : {200, 100, 50, 20, 1}) {
    auto p = make_sampling_plan(s, steps);
    EXPECT_EQ(p.timesteps.back(), 1000);
    double prod = 1.0;
    for (int i = 1; i <= steps; ++i) {
      prod *= p.alpha[i];
      EXPECT_NEAR(prod, s.alpha_hat[p.timesteps[i - 1]], 1e-12);
    }
  }
  EXPECT_THROW(make_sampling_plan(s, 0), ScheduleError);
  EXPECT_THROW(make_sampling_plan(s, 1001), ScheduleError);
}

TEST(SamplingPlan, OracleChainRecoversTargetWithFewSteps) {
  auto s = make_schedule(1000, 1.5e-4, 1.95e-2);
  Rng rng(5);
  Tensor y = rand_uniform({2, 4, 4}, -1, 1, rng, DType::f64);
  for (int steps : {50, 20, 1}) {
    auto p = make_sampling_plan(s, steps);
    Tensor yt = randn(y.shape(), rng, DType::f64);
    auto oracle = [&](const Tensor& cur, int t) {
      const double ah = s.alpha_hat_at(t);
      return mul_scalar(sub(cur, mul_scalar(y, std::sqrt(ah))), 1.0 / std::sqrt(1.0 - ah));
    };
    Tensor out = sample_chain(p, yt, oracle, rng);
    for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(out.at(i), y.at(i), 1e-6);
  }
}

TEST(StagePartition, BoundariesFollowTableSplit) {
  auto p = make_partition(1000, 4);
  EXPECT_EQ(stage_of(1000, p), 0);
  EXPECT_EQ(stage_of(751, p), 0);
  EXPECT_EQ(stage_of(750, p), 1);
  EXPECT_EQ(stage_of(500, p), 2);
  EXPECT_EQ(stage_of(250, p), 3);
  EXPECT_EQ(stage_of(1, p), 3);
  EXPECT_THROW(stage_of(0, p), ScheduleError);
  EXPECT_THROW(stage_of(1001, p), ScheduleError);
  EXPECT_THROW(make_partition(1000, 3), ScheduleError);
  auto iv = p.intervals();
  ASSERT_EQ(iv.size(), 4u);
  EXPECT_EQ(iv[0].hi_inclusive, 1000);
  EXPECT_EQ(iv[0].lo_exclusive, 750);
  EXPECT_EQ(iv[3].lo_exclusive, 0);
}

TEST(StagePartition, TotalSurjectiveEqualSizedAndMonotone) {
  for (auto [T, N] : {std::pair{1000, 4}, {1000, 8}, {20, 4}, {12, 1}}) {
    auto p = make_partition(T, N);
    std::vector<int> counts(static_cast<std::size_t>(N), 0);
    int prev = 0;
    for (int t = T; t >= 1; --t) {
      const int k = stage_of(t, p);
      ASSERT_GE(k, 0);
      ASSERT_LT(k, N);
      EXPECT_GE(k, prev);
      prev = k;
      ++counts[static_cast<std::size_t>(k)];
      const auto iv = p.intervals()[static_cast<std::size_t>(k)];
      EXPECT_TRUE(t > iv.lo_exclusive && t <= iv.hi_inclusive);
    }
    for (int c : counts) EXPECT_EQ(c, T / N);
  }
}

}  // namespace
}  // namespace ssmoe::diffusion
