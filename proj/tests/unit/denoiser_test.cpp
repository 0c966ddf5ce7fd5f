#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "ssmoe/denoiser/denoiser.hpp"
#include "support/model_checks.hpp"

using namespace ssmoe;
using namespace ssmoe::denoiser;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  auto x = a.to_vector(), y = b.to_vector();
  EXPECT_EQ(x.size(), y.size());
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

void fill_expert(SpaceMoeLayer& layer, int i, double value) {
  for (auto& [n, p] : layer.expert(i).named_parameters()) p->copy_from(Tensor::full(p->shape(), value, p->dtype()));
}

std::map<std::string, std::vector<double>> snapshot(const nn::Module& m) {
  std::map<std::string, std::vector<double>> out;
  for (auto& [n, p] : m.named_parameters()) out[n] = p->to_vector();
  return out;
}

DenoiserConfig tiny_denoiser(int stages = 4) {
  DenoiserConfig c;
  c.unet = ssmoe::testing::tiny_unet_config();
  c.num_sampling_experts = stages;
  c.T = 40;
  return c;
}

LatentDataset tiny_latents(int n, std::uint64_t seed) {
  Rng rng(seed);
  return {randn({n, 3, 4, 4}, rng), randn({n, 3, 8, 8}, rng)};
}

}  // namespace

// ---- Space MoE routing ----

TEST(SpaceMoe, IdenticalExpertsAreRoutingInvariant) {
  Rng rng(1);
  SpaceMoeLayer layer(8, 16, 4, 0.999, rng);
  for (int i = 1; i < 4; ++i) layer.expert(i).copy_parameters_from(layer.expert(0));
  Tensor x = randn({2, 12, 8}, rng);
  Rng r1(10), r2(20);
  Tensor a = layer.forward(x, &r1);
  Tensor b = layer.forward(x, &r2);
  EXPECT_LT(max_abs_diff(a, b), 1e-6);
  Tensor single = add(x, layer.expert(0).forward(layer.norm().forward(x)));
  EXPECT_LT(max_abs_diff(a, single), 1e-6);
}

TEST(SpaceMoe, EqualGroupSizing) {
  Rng rng(3);
  auto a = SpaceMoeLayer::random_assignment(1, 8, 4, rng);
  std::vector<int> count(4, 0);
  for (int e : a[0]) ++count[static_cast<std::size_t>(e)];
  for (int c : count) EXPECT_EQ(c, 2);
}

TEST(SpaceMoe, AssignmentIsAPermutationPerSample) {
  Rng rng(4);
  auto a = SpaceMoeLayer::random_assignment(3, 7, 4, rng);
  for (const auto& row : a) {
    std::vector<int> count(4, 0);
    for (int e : row) ++count[static_cast<std::size_t>(e)];
    // G = ceil(7/4) = 2: three full groups and one with a padding slot
    EXPECT_EQ(count[0] + count[1] + count[2] + count[3], 7);
    for (int c : count) EXPECT_LE(c, 2);
    EXPECT_EQ(count[3], 1);
  }
}

TEST(SpaceMoe, PerTokenOutputMatchesStandaloneExpert) {
  for (std::int64_t length : {8, 7}) {
    Rng rng(5);
    SpaceMoeLayer layer(6, 12, 4, 0.999, rng);
    Tensor x = randn({2, length, 6}, rng);
    Rng split(99);
    auto assignment = SpaceMoeLayer::random_assignment(2, length, 4, split);
    Tensor y = layer.forward_assigned(x, assignment);
    for (std::int64_t b = 0; b < 2; ++b) {
      for (std::int64_t l = 0; l < length; ++l) {
        Tensor tok = narrow(narrow(x, 0, b, 1), 1, l, 1);
        const int e = assignment[static_cast<std::size_t>(b)][static_cast<std::size_t>(l)];
        Tensor expect = add(tok, layer.expert(e).forward(layer.norm().forward(tok)));
        Tensor got = narrow(narrow(y, 0, b, 1), 1, l, 1);
        EXPECT_LT(max_abs_diff(got, expect), 1e-5) << "L=" << length << " b=" << b << " l=" << l;
      }
    }
  }
}

TEST(SpaceMoe, DistinctExpertsDependOnSeed) {
  Rng rng(6);
  SpaceMoeLayer layer(8, 16, 4, 0.999, rng);
  Tensor x = randn({1, 16, 8}, rng);
  Rng r1(1), r2(2);
  EXPECT_GT(max_abs_diff(layer.forward(x, &r1), layer.forward(x, &r2)), 1e-4);
  Rng r3(1), r4(1);
  EXPECT_EQ(layer.forward(x, &r3).to_vector(), layer.forward(x, &r4).to_vector());
}

TEST(SpaceMoe, TrainingModeNeedsRng) {
  Rng rng(7);
  SpaceMoeLayer layer(4, 8, 2, 0.999, rng);
  EXPECT_THROW(layer.forward(Tensor::zeros({1, 4, 4}), nullptr), std::invalid_argument);
  EXPECT_THROW(layer.forward(Tensor::zeros({1, 4, 5}), nullptr), TensorError);
}

TEST(SpaceMoe, GradientsReachOnlyRoutedExperts) {
  Rng rng(8);
  SpaceMoeLayer layer(4, 8, 4, 0.999, rng);
  layer.to(DType::f64);
  Tensor x = randn({1, 2, 4}, rng, DType::f64);
  // two tokens, four experts: experts 2 and 3 only see padding
  sum(layer.forward_assigned(x, {{0, 1}})).backward();
  auto has_nonzero = [](Ffn& f) {
    for (auto& [n, p] : f.named_parameters()) {
      if (!p->has_grad()) continue;
      for (double g : p->grad().to_vector())
        if (g != 0.0) return true;
    }
    return false;
  };
  EXPECT_TRUE(has_nonzero(layer.expert(0)));
  EXPECT_TRUE(has_nonzero(layer.expert(1)));
  EXPECT_FALSE(has_nonzero(layer.expert(2)));
  EXPECT_FALSE(has_nonzero(layer.expert(3)));
}

// ---- momentum sharing ----

TEST(MomentumShare, EqualWeightsAreAFixedPoint) {
  Rng rng(9);
  SpaceMoeLayer layer(4, 8, 4, 0.9, rng);
  for (int i = 1; i < 4; ++i) layer.expert(i).copy_parameters_from(layer.expert(0));
  auto before = snapshot(layer);
  layer.momentum_share();
  EXPECT_EQ(snapshot(layer), before);
}

TEST(MomentumShare, TwoExpertForcedArithmetic) {
  Rng rng(10);
  SpaceMoeLayer layer(2, 2, 2, 0.9, rng);
  layer.to(DType::f64);
  fill_expert(layer, 0, 0.0);
  fill_expert(layer, 1, 1.0);
  layer.momentum_share();
  for (auto& [n, p] : layer.expert(0).named_parameters())
    for (double v : p->to_vector()) EXPECT_NEAR(v, 0.1, 1e-15);
  for (auto& [n, p] : layer.expert(1).named_parameters())
    for (double v : p->to_vector()) EXPECT_NEAR(v, 0.9, 1e-15);
}

TEST(MomentumShare, GammaOneIsIdentity) {
  Rng rng(11);
  SpaceMoeLayer layer(4, 8, 3, 1.0, rng);
  auto before = snapshot(layer);
  layer.momentum_share();
  EXPECT_EQ(snapshot(layer), before);
}

TEST(MomentumShare, ExpertSumConservedOverRandomTrials) {
  Rng rng(12);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng.randint(0, 7));
    SpaceMoeLayer layer(4, 6, n, rng.uniform(0.0, 1.0), rng);
    ssmoe::testing::randomize_experts(layer, rng);
    auto before = ssmoe::testing::expert_sum(layer);
    layer.momentum_share();
    auto after = ssmoe::testing::expert_sum(layer);
    double scale = 0.0, err = 0.0;
    for (std::size_t k = 0; k < before.size(); ++k) {
      scale = std::max(scale, std::abs(before[k]));
      err = std::max(err, std::abs(after[k] - before[k]));
    }
    worst = std::max(worst, err / scale);
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(MomentumShare, SpreadStrictlyDecreases) {
  Rng rng(13);
  SpaceMoeLayer layer(4, 8, 4, 0.999, rng);
  ssmoe::testing::randomize_experts(layer, rng);
  double prev = ssmoe::testing::expert_spread(layer);
  for (int it = 0; it < 1000; ++it) {
    layer.momentum_share();
    const double s = ssmoe::testing::expert_spread(layer);
    ASSERT_LT(s, prev) << "iteration " << it;
    prev = s;
  }
}

// ---- merging ----

TEST(Merge, IdenticalExpertsMergeExactly) {
  Rng rng(14);
  SpaceMoeLayer layer(4, 8, 4, 0.999, rng);
  for (int i = 1; i < 4; ++i) layer.expert(i).copy_parameters_from(layer.expert(0));
  auto w = snapshot(layer.expert(0));
  layer.merge();
  EXPECT_TRUE(layer.merged());
  EXPECT_EQ(layer.num_experts(), 1);
  EXPECT_EQ(snapshot(layer.expert(0)), w);
}

TEST(Merge, ScalarMean) {
  Rng rng(15);
  SpaceMoeLayer layer(2, 2, 2, 0.999, rng);
  fill_expert(layer, 0, 0.0);
  fill_expert(layer, 1, 2.0);
  layer.merge();
  for (auto& [n, p] : layer.expert(0).named_parameters())
    for (double v : p->to_vector()) EXPECT_EQ(v, 1.0);
}

TEST(Merge, IsIdempotentAndDropsExpertParameters) {
  Rng rng(16);
  SpaceMoeLayer layer(4, 8, 4, 0.999, rng);
  const auto before = layer.parameter_count();
  layer.merge();
  auto w = snapshot(layer);
  layer.merge();
  EXPECT_EQ(snapshot(layer), w);
  const std::int64_t ffn = 4 * 8 + 8 + 8 * 4 + 4;
  EXPECT_EQ(before - layer.parameter_count(), 3 * ffn);
  for (auto& [n, p] : layer.named_parameters()) EXPECT_EQ(n.find("experts.1"), std::string::npos) << n;
}

TEST(Merge, CommutesWithMomentumShare) {
  Rng rng(17);
  SpaceMoeLayer a(6, 12, 4, 0.97, rng);
  ssmoe::testing::randomize_experts(a, rng);
  Rng rng2(0);
  SpaceMoeLayer b(6, 12, 4, 0.97, rng2);
  b.copy_parameters_from(a);
  a.momentum_share();
  a.merge();
  b.merge();
  auto sa = snapshot(a), sb = snapshot(b);
  for (auto& [n, v] : sa)
    for (std::size_t k = 0; k < v.size(); ++k) EXPECT_NEAR(v[k], sb[n][k], 1e-6) << n;
}

namespace {

Tensor mean_expert_output(const SpaceMoeLayer& layer, const Tensor& x) {
  Tensor total;
  for (int i = 0; i < layer.num_experts(); ++i) {
    Tensor yi = add(x, layer.expert(i).forward(layer.norm().forward(x)));
    total = total.defined() ? add(total, yi) : yi;
  }
  return mul_scalar(total, 1.0 / layer.num_experts());
}

}  // namespace

TEST(Merge, LinearExpertsMergeToMeanOutput) {
  // With identity activation the FFN is fc2(fc1(x)), bilinear in (fc1, fc2).
  // Holding fc1 shared makes the output linear in the differing weights, so
  // the weight mean must give the output mean.
  Rng rng(18);
  SpaceMoeLayer layer(6, 10, 3, 0.999, rng, FfnActivation::identity);
  layer.to(DType::f64);
  ssmoe::testing::randomize_experts(layer, rng);
  for (int i = 1; i < 3; ++i) {
    layer.expert(i).fc1.weight.copy_from(layer.expert(0).fc1.weight);
    layer.expert(i).fc1.bias.copy_from(layer.expert(0).fc1.bias);
  }
  Tensor x = randn({2, 5, 6}, rng, DType::f64);
  Tensor expect = mean_expert_output(layer, x);
  layer.merge();
  EXPECT_LT(max_abs_diff(layer.forward(x, nullptr), expect), 1e-10);
}

TEST(Merge, FullyDistinctLinearExpertsAreNotOutputAveraged) {
  Rng rng(31);
  SpaceMoeLayer layer(6, 10, 3, 0.999, rng, FfnActivation::identity);
  layer.to(DType::f64);
  ssmoe::testing::randomize_experts(layer, rng);
  Tensor x = randn({2, 5, 6}, rng, DType::f64);
  Tensor expect = mean_expert_output(layer, x);
  layer.merge();
  EXPECT_GT(max_abs_diff(layer.forward(x, nullptr), expect), 1e-3);
}

TEST(Merge, GeluExpertsDoNotMergeToMeanOutput) {
  // fc2 shared, fc1 distinct: without an activation the output is linear in
  // fc1 and merging matches the output mean; GELU breaks that, since merging
  // averages weights, not outputs.
  Rng rng(19);
  for (auto act : {FfnActivation::identity, FfnActivation::gelu}) {
    SpaceMoeLayer layer(6, 10, 3, 0.999, rng, act);
    layer.to(DType::f64);
    ssmoe::testing::randomize_experts(layer, rng);
    for (int i = 1; i < 3; ++i) {
      layer.expert(i).fc2.weight.copy_from(layer.expert(0).fc2.weight);
      layer.expert(i).fc2.bias.copy_from(layer.expert(0).fc2.bias);
    }
    Tensor x = randn({2, 5, 6}, rng, DType::f64);
    Tensor expect = mean_expert_output(layer, x);
    layer.merge();
    const double diff = max_abs_diff(layer.forward(x, nullptr), expect);
    if (act == FfnActivation::identity) {
      EXPECT_LT(diff, 1e-10);
    } else {
      EXPECT_GT(diff, 1e-3);
    }
  }
}

// ---- UNet ----

TEST(UNet, DeskConfigKeepsLatentShapeAndStartsAtZero) {
  Rng rng(20);
  UNet net(UNetConfig{}, rng);
  Tensor x = randn({2, 6, 16, 16}, rng);
  Rng split(1);
  Tensor y = net.forward(x, {3.0, 900.0}, &split);
  EXPECT_EQ(y.shape(), (Shape{2, 3, 16, 16}));
  for (double v : y.to_vector()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(net.moe_layers().size(), 3u);  // down, mid and up at resolution 8
}

TEST(UNet, RejectsIndivisibleSpatialSize) {
  Rng rng(21);
  UNet net(ssmoe::testing::tiny_unet_config(), rng);
  Rng split(1);
  EXPECT_THROW(net.forward(Tensor::zeros({1, 6, 7, 7}), {1.0}, &split), TensorError);
  EXPECT_THROW(net.forward(Tensor::zeros({1, 5, 8, 8}), {1.0}, &split), TensorError);
}

TEST(UNet, ConfigValidation) {
  auto c = ssmoe::testing::tiny_unet_config();
  c.attention_resolutions = {3};
  Rng rng(0);
  EXPECT_THROW(UNet(c, rng), std::invalid_argument);
  c = ssmoe::testing::tiny_unet_config();
  c.image_size = 6;
  c.channel_mult = {1, 2, 2};
  EXPECT_THROW(UNet(c, rng), std::invalid_argument);
}

TEST(UNet, TimestepEmbeddingAtZero) {
  Tensor e = timestep_embedding({0.0}, 8);
  auto v = e.to_vector();
  for (int i = 0; i < 4; ++i) EXPECT_EQ(v[static_cast<std::size_t>(i)], 1.0);  // cos(0)
  for (int i = 4; i < 8; ++i) EXPECT_EQ(v[static_cast<std::size_t>(i)], 0.0);  // sin(0)
}

TEST(UNet, ParameterSubsetMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto r = ssmoe::testing::unet_param_gradcheck(seed);
    EXPECT_EQ(r.checked, 32);
    EXPECT_GT(r.numeric_norm, 0.0);
    EXPECT_LT(r.rel_error, 1e-3) << "seed " << seed << " max abs " << r.max_abs_error;
  }
}

// ---- Sampling MoE ----

TEST(Denoiser, ParameterCountScalesWithStages) {
  for (int n : {1, 2, 4}) {
    Rng rng(22);
    DenoiserModel model(tiny_denoiser(n), rng);
    Rng rng2(22);
    UNet single(ssmoe::testing::tiny_unet_config(), rng2);
    EXPECT_EQ(model.parameter_count(), n * single.parameter_count());
  }
}

TEST(Denoiser, ExactlyOneStageReceivesGradient) {
  Rng rng(23);
  DenoiserModel model(tiny_denoiser(), rng);
  auto data = tiny_latents(2, 1);
  for (int t : {1, 10, 11, 25, 40}) {
    model.zero_grad();
    Rng split(2);
    Tensor eps = randn({2, 3, 8, 8}, split);
    diffusion::eps_loss(eps, model.forward(data.latent, data.lr, {t, t}, &split)).backward();
    const int owner = model.stage_of(t);
    for (int s = 0; s < model.num_stages(); ++s) {
      bool touched = false;
      for (auto& [n, p] : model.expert(s).named_parameters()) {
        if (!p->has_grad()) continue;
        for (double g : p->grad().to_vector()) touched = touched || g != 0.0;
      }
      EXPECT_EQ(touched, s == owner) << "t=" << t << " stage " << s;
    }
  }
}

TEST(Denoiser, MixedBatchMatchesPerSampleDispatch) {
  Rng rng(24);
  DenoiserModel model(tiny_denoiser(), rng);
  for (auto& [n, p] : model.named_parameters())
    if (n.find("conv_out") != std::string::npos) p->copy_from(randn(p->shape(), rng));
  model.merge_space_experts();
  auto data = tiny_latents(3, 2);
  Tensor mixed = model.forward(data.latent, data.lr, {5, 38, 12}, nullptr);
  const std::vector<int> ts{5, 38, 12};
  for (std::int64_t b = 0; b < 3; ++b) {
    Tensor one = model.forward(narrow(data.latent, 0, b, 1), narrow(data.lr, 0, b, 1),
                               {ts[static_cast<std::size_t>(b)]}, nullptr);
    EXPECT_LT(max_abs_diff(narrow(mixed, 0, b, 1), one), 1e-5);
  }
}

TEST(Denoiser, ZeroLearningRateOnlyMomentumSharingMoves) {
  Rng rng(25);
  DenoiserModel model(tiny_denoiser(2), rng);
  Rng rng2(25);
  DenoiserModel reference(tiny_denoiser(2), rng2);
  LatentDataset one = tiny_latents(1, 3);
  LatentDataset data{concat({one.lr, one.lr, one.lr}, 0), concat({one.latent, one.latent, one.latent}, 0)};
  Stage1Config cfg;
  cfg.steps = 3;
  cfg.batch_size = 2;
  cfg.lr = 0.0;
  cfg.log_interval = 1;

  cfg.momentum_sharing = false;
  train_stage1(model, data, cfg);
  EXPECT_EQ(snapshot(model), snapshot(reference));

  cfg.momentum_sharing = true;
  train_stage1(model, data, cfg);
  for (int i = 0; i < 3; ++i) reference.momentum_share_all();
  EXPECT_EQ(snapshot(model), snapshot(reference));
}

TEST(Denoiser, TrainingLogHasOneRecordPerInterval) {
  Rng rng(26);
  DenoiserModel model(tiny_denoiser(2), rng);
  Stage1Config cfg;
  cfg.steps = 12;
  cfg.batch_size = 2;
  cfg.log_interval = 4;
  int hooks = 0;
  auto log = train_stage1(model, tiny_latents(4, 4), cfg, nullptr, [&](int, double) { ++hooks; });
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[2].step, 12);
  EXPECT_EQ(hooks, 12);
  for (const auto& r : log) EXPECT_TRUE(std::isfinite(r.loss));
}

TEST(Denoiser, NonFiniteLossAborts) {
  Rng rng(27);
  DenoiserModel model(tiny_denoiser(1), rng);
  for (auto& [n, p] : model.named_parameters())
    if (n.find("conv_out.bias") != std::string::npos) p->copy_from(Tensor::full(p->shape(), NAN));
  Stage1Config cfg;
  cfg.steps = 2;
  cfg.batch_size = 1;
  try {
    train_stage1(model, tiny_latents(2, 5), cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss"), std::string::npos);
  }
}

TEST(Denoiser, TrainingIsDeterministic) {
  auto run = [] {
    Rng rng(28);
    DenoiserModel model(tiny_denoiser(2), rng);
    Stage1Config cfg;
    cfg.steps = 4;
    cfg.batch_size = 2;
    cfg.seed = 9;
    train_stage1(model, tiny_latents(4, 6), cfg);
    data::TensorArchive ar;
    save_denoiser(model, ar);
    return ar.serialize();
  };
  EXPECT_EQ(run(), run());
}

TEST(Denoiser, CheckpointRoundTrip) {
  for (bool merge : {false, true}) {
    Rng rng(29);
    DenoiserModel model(tiny_denoiser(2), rng);
    for (auto& [n, p] : model.named_parameters()) p->copy_from(randn(p->shape(), rng));
    if (merge) model.merge_space_experts();
    data::TensorArchive ar;
    save_denoiser(model, ar);
    auto loaded = load_denoiser(data::TensorArchive::deserialize(ar.serialize()));
    EXPECT_EQ(loaded->merged(), merge);
    EXPECT_EQ(snapshot(*loaded), snapshot(model));
    EXPECT_EQ(loaded->config().T, 40);
    EXPECT_EQ(loaded->config().unet.attention_resolutions, std::vector<int>{4});
  }
}

TEST(Denoiser, SamplingIsFiniteAndSeeded) {
  Rng rng(30);
  DenoiserModel model(tiny_denoiser(), rng);
  model.merge_space_experts();
  const auto schedule = diffusion::make_schedule(40, 1e-3, 0.2);
  auto data = tiny_latents(2, 7);
  Rng a(5), b(5);
  Tensor ya = sample_latents(model, schedule, data.lr, {2, 3, 8, 8}, 10, a);
  Tensor yb = sample_latents(model, schedule, data.lr, {2, 3, 8, 8}, 10, b);
  EXPECT_EQ(ya.to_vector(), yb.to_vector());
  for (double v : ya.to_vector()) EXPECT_TRUE(std::isfinite(v));
}
