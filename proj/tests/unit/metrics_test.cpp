#include <gtest/gtest.h>

#include <cmath>
#include <complex>

#include "ssmoe/metrics/cost.hpp"
#include "ssmoe/metrics/metrics.hpp"
#include "ssmoe/tensor/ops.hpp"
#include "support/dft_oracle.hpp"
#include "support/model_checks.hpp"

using namespace ssmoe;
using namespace ssmoe::metrics;

namespace {

Tensor random_image(Rng& rng, std::int64_t h = 16, std::int64_t w = 16, double lo = -1, double hi = 1) {
  return rand_uniform({3, h, w}, lo, hi, rng, DType::f64);
}

// Per-pixel reference written without the library's luminance helper.
double naive_psnr(const Tensor& a, const Tensor& b) {
  auto x = a.to_vector(), y = b.to_vector();
  const std::size_t plane = x.size() / 3;
  double se = 0;
  for (std::size_t k = 0; k < plane; ++k) {
    double ya = 0, yb = 0;
    const double coef[3] = {0.299, 0.587, 0.114};
    for (std::size_t c = 0; c < 3; ++c) {
      ya += coef[c] * (x[c * plane + k] * 0.5 + 0.5);
      yb += coef[c] * (y[c * plane + k] * 0.5 + 0.5);
    }
    se += (ya - yb) * (ya - yb);
  }
  return -10.0 * std::log10(se / static_cast<double>(plane));
}

// Direct windowed SSIM with the 2-D Gaussian evaluated per tap.
double naive_ssim(const Tensor& a, const Tensor& b) {
  auto ya = luminance(a).to_vector(), yb = luminance(b).to_vector();
  const int h = static_cast<int>(a.dim(-2)), w = static_cast<int>(a.dim(-1));
  double wsum = 0;
  for (int i = -5; i <= 5; ++i)
    for (int j = -5; j <= 5; ++j) wsum += std::exp(-(i * i + j * j) / (2 * 1.5 * 1.5));
  double total = 0;
  int count = 0;
  for (int ci = 5; ci < h - 5; ++ci)
    for (int cj = 5; cj < w - 5; ++cj) {
      double mx = 0, my = 0;
      for (int i = -5; i <= 5; ++i)
        for (int j = -5; j <= 5; ++j) {
          const double g = std::exp(-(i * i + j * j) / (2 * 1.5 * 1.5)) / wsum;
          mx += g * ya[static_cast<std::size_t>((ci + i) * w + cj + j)];
          my += g * yb[static_cast<std::size_t>((ci + i) * w + cj + j)];
        }
      double vx = 0, vy = 0, cov = 0;
      for (int i = -5; i <= 5; ++i)
        for (int j = -5; j <= 5; ++j) {
          const double g = std::exp(-(i * i + j * j) / (2 * 1.5 * 1.5)) / wsum;
          const double dx = ya[static_cast<std::size_t>((ci + i) * w + cj + j)] - mx;
          const double dy = yb[static_cast<std::size_t>((ci + i) * w + cj + j)] - my;
          vx += g * dx * dx;
          vy += g * dy * dy;
          cov += g * dx * dy;
        }
      const double c1 = 1e-4, c2 = 9e-4;
      total += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / count;
}

double naive_lsd(const Tensor& a, const Tensor& b) {
  auto x = a.to_vector(), y = b.to_vector();
  const int h = static_cast<int>(a.dim(-2)), w = static_cast<int>(a.dim(-1));
  const std::size_t plane = static_cast<std::size_t>(h * w);
  double acc = 0;
  for (std::size_t s = 0; s < x.size(); s += plane) {
    auto fa = ssmoe::testing::naive_dft2_real({x.begin() + static_cast<long>(s), x.begin() + static_cast<long>(s + plane)}, h, w);
    auto fb = ssmoe::testing::naive_dft2_real({y.begin() + static_cast<long>(s), y.begin() + static_cast<long>(s + plane)}, h, w);
    for (std::size_t k = 0; k < plane; ++k) {
      const double d = 10 * std::log10(std::norm(fa[k]) + 1e-8) - 10 * std::log10(std::norm(fb[k]) + 1e-8);
      acc += d * d;
    }
  }
  return std::sqrt(acc / static_cast<double>(x.size()));
}

std::uint64_t param_numel(const nn::Module& m) {
  std::uint64_t n = 0;
  for (auto& [name, p] : m.named_parameters()) n += static_cast<std::uint64_t>(p->numel());
  return n;
}

denoiser::DenoiserConfig cost_config(int space_experts, int stages) {
  denoiser::DenoiserConfig c;
  c.unet = ssmoe::testing::tiny_unet_config();
  c.unet.num_space_experts = space_experts;
  c.num_sampling_experts = stages;
  c.T = 40;
  return c;
}

}  // namespace

// ---- PSNR ----

TEST(PsnrY, IdenticalImagesHitTheCap) {
  Rng rng(1);
  Tensor a = random_image(rng);
  EXPECT_EQ(psnr_y(a, a), 100.0);
}

TEST(PsnrY, UniformLuminanceStepOfTenthGivesTwentyDb) {
  Rng rng(2);
  Tensor a = random_image(rng, 16, 16, -0.8, 0.8);
  // +0.2 on [-1, 1] is +0.1 on [0, 1] in every channel, so Y moves by 0.1.
  EXPECT_NEAR(psnr_y(a, add_scalar(a, 0.2)), 20.0, 1e-9);
}

TEST(PsnrY, MatchesNaiveReference) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_image(rng), b = random_image(rng);
    EXPECT_NEAR(psnr_y(a, b), naive_psnr(a, b), 1e-6);
  }
}

TEST(PsnrY, DecreasesWithNoiseLevel) {
  Rng rng(4);
  Tensor a = random_image(rng, 32, 32);
  Tensor noise = randn(a.shape(), rng, DType::f64);
  double prev = 101.0;
  for (double sigma : {0.001, 0.01, 0.05, 0.1, 0.3}) {
    const double p = psnr_y(a, add(a, mul_scalar(noise, sigma)));
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(PsnrY, RejectsShapeMismatchAndNonRgb) {
  EXPECT_THROW(psnr_y(Tensor::zeros({3, 8, 8}), Tensor::zeros({3, 8, 4})), std::invalid_argument);
  EXPECT_THROW(psnr_y(Tensor::zeros({1, 8, 8}), Tensor::zeros({1, 8, 8})), std::invalid_argument);
}

// ---- SSIM ----

TEST(Ssim, IdenticalIsOne) {
  Rng rng(5);
  Tensor a = random_image(rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  Tensor c = Tensor::full({3, 16, 16}, 0.3, DType::f64);
  EXPECT_NEAR(ssim(c, c.clone()), 1.0, 1e-12);
}

TEST(Ssim, NegatedZeroMeanImageIsNegativeAndMatchesOracle) {
  Rng rng(6);
  // Luminance of a is centred on 0.5 so that the negated image mirrors it.
  Tensor a = mul_scalar(randn({3, 24, 24}, rng, DType::f64), 0.3);
  Tensor b = mul_scalar(a, -1.0);
  const double s = ssim(a, b);
  EXPECT_LT(s, 0.0);
  EXPECT_NEAR(s, naive_ssim(a, b), 1e-9);
}

TEST(Ssim, RandomPairsMatchOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a = random_image(rng, 16, 20), b = random_image(rng, 16, 20);
    EXPECT_NEAR(ssim(a, b), naive_ssim(a, b), 1e-9);
  }
}

TEST(Ssim, RejectsTinyImages) { EXPECT_THROW(ssim(Tensor::zeros({3, 8, 8}), Tensor::zeros({3, 8, 8})), std::invalid_argument); }

// ---- log-spectral distance ----

TEST(Lsd, IdenticalIsZero) {
  Rng rng(8);
  Tensor a = random_image(rng);
  EXPECT_EQ(log_spectral_distance(a, a), 0.0);
}

TEST(Lsd, ShiftedImpulseIsZero) {
  std::vector<double> p(64, 0.0), q(64, 0.0);
  p[9] = 1.0;
  q[42] = 1.0;
  EXPECT_NEAR(log_spectral_distance(Tensor::from_values({8, 8}, p, DType::f64), Tensor::from_values({8, 8}, q, DType::f64)),
              0.0, 1e-9);
}

TEST(Lsd, MatchesBruteForceDft) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = rand_uniform({3, 8, 8}, -1, 1, rng, DType::f64), b = rand_uniform({3, 8, 8}, -1, 1, rng, DType::f64);
    const double want = naive_lsd(a, b);
    EXPECT_NEAR(log_spectral_distance(a, b), want, 1e-5 * want);
  }
}

TEST(Lsd, RejectsNonPowerOfTwo) {
  EXPECT_THROW(log_spectral_distance(Tensor::zeros({3, 6, 8}), Tensor::zeros({3, 6, 8})), std::invalid_argument);
}

// ---- report aggregation ----

TEST(MetricReport, MeanOfRows) {
  Rng rng(10);
  std::vector<MetricRow> rows;
  for (int i = 0; i < 4; ++i) rows.push_back(evaluate_pair("img" + std::to_string(i), random_image(rng), random_image(rng)));
  auto report = summarize(rows);
  double p = 0, s = 0, l = 0;
  for (auto& r : rows) p += r.psnr_y / 4, s += r.ssim / 4, l += r.lsd / 4;
  EXPECT_NEAR(report.mean.psnr_y, p, 1e-12);
  EXPECT_NEAR(report.mean.ssim, s, 1e-12);
  EXPECT_NEAR(report.mean.lsd, l, 1e-12);
  EXPECT_EQ(report.mean.name, "mean");
}

// ---- cost accounting ----

TEST(Cost, MergedModelCostsExactlyOneFfn) {
  for (int n : {2, 4, 8}) {
    auto cfg = cost_config(n, n);
    auto merged = count_cost(cfg, {1, 3, 8, 8}, MoeMode::merged, 200);
    auto single = count_cost(single_ffn_baseline(cfg), {1, 3, 8, 8}, MoeMode::merged, 200);
    EXPECT_EQ(merged.flops_per_step, single.flops_per_step) << n;
    EXPECT_EQ(merged.param_count, static_cast<std::uint64_t>(n) * single.param_count) << n;
  }
}

TEST(Cost, RoutedExpertLayersHoldNTimesTheParameters) {
  for (int n : {2, 4, 8}) {
    auto routed = count_cost(cost_config(n, 1), {1, 3, 8, 8}, MoeMode::routed, 1);
    auto single = count_cost(cost_config(1, 1), {1, 3, 8, 8}, MoeMode::routed, 1);
    ASSERT_EQ(routed.layers.size(), single.layers.size());
    for (std::size_t i = 0; i < routed.layers.size(); ++i) {
      const auto& a = routed.layers[i];
      const auto& b = single.layers[i];
      if (a.kind == "ffn") EXPECT_EQ(a.params, static_cast<std::uint64_t>(n) * b.params) << a.name;
      else EXPECT_EQ(a.params, b.params) << a.name;
    }
    EXPECT_GT(routed.param_count, single.param_count);
  }
}

TEST(Cost, StageExpertsMultiplyParameters) {
  auto four = count_cost(cost_config(4, 4), {1, 3, 8, 8}, MoeMode::merged, 1);
  auto one = count_cost(cost_config(4, 1), {1, 3, 8, 8}, MoeMode::merged, 1);
  EXPECT_EQ(four.param_count, 4 * one.param_count);
  EXPECT_EQ(four.flops_per_step, one.flops_per_step);
}

TEST(Cost, TotalIsPerStepTimesSteps) {
  auto r = count_cost(cost_config(4, 4), {2, 3, 8, 8}, MoeMode::routed, 37);
  EXPECT_EQ(r.total_flops, r.flops_per_step * 37u);
  std::uint64_t sum = 0;
  for (auto& e : r.layers) sum += e.macs;
  EXPECT_EQ(sum, r.flops_per_step);
}

TEST(Cost, ParameterCountMatchesBuiltModel) {
  for (int n : {1, 2, 4}) {
    auto cfg = cost_config(n, 4);
    Rng rng(11);
    denoiser::DenoiserModel model(cfg, rng);
    EXPECT_EQ(count_cost(cfg, {1, 3, 8, 8}, MoeMode::routed, 1).param_count, param_numel(model)) << n;
    model.merge_space_experts();
    EXPECT_EQ(count_cost(cfg, {1, 3, 8, 8}, MoeMode::merged, 1).param_count, param_numel(model)) << n;
  }
}

TEST(Cost, FlopsMatchExecutedMacs) {
  for (int n : {1, 3, 4}) {  // n = 3 exercises group padding (L = 16 at the attention level)
    auto cfg = cost_config(n, 2);
    Rng rng(12);
    denoiser::DenoiserModel model(cfg, rng);
    Tensor z = randn({2, 3, 8, 8}, rng), lr = randn({2, 3, 2, 2}, rng);
    NoGradGuard ng;
    MacCounter::enable(true);
    MacCounter::reset();
    Rng route(13);
    model.forward(z, lr, {5, 6}, &route);
    EXPECT_EQ(MacCounter::value(), count_cost(cfg, {2, 3, 8, 8}, MoeMode::routed, 1).flops_per_step) << n;
    model.merge_space_experts();
    MacCounter::reset();
    model.forward(z, lr, {5, 6}, nullptr);
    EXPECT_EQ(MacCounter::value(), count_cost(cfg, {2, 3, 8, 8}, MoeMode::merged, 1).flops_per_step) << n;
    MacCounter::enable(false);
  }
}

TEST(Cost, RejectsMismatchedLatent) {
  auto cfg = cost_config(4, 4);
  EXPECT_THROW(count_cost(cfg, {1, 4, 8, 8}, MoeMode::merged, 1), std::invalid_argument);
  EXPECT_THROW(count_cost(cfg, {1, 3, 7, 7}, MoeMode::merged, 1), std::invalid_argument);
  EXPECT_THROW(count_cost(cfg, {3, 8, 8}, MoeMode::merged, 1), std::invalid_argument);
}
