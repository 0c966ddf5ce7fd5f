#include <gtest/gtest.h>

#include "ssmoe/config/run_config.hpp"

using namespace ssmoe;
using config::ConfigError;
using config::RunConfig;

TEST(RunConfig, DefaultsRoundTripThroughText) {
  RunConfig a;
  const RunConfig b = config::parse_config(a.to_text());
  EXPECT_EQ(a.to_text(), b.to_text());
  for (const auto& k : RunConfig::keys()) EXPECT_EQ(a.get(k), b.get(k)) << k;
}

TEST(RunConfig, EditedValuesRoundTrip) {
  RunConfig a;
  a.set("stage1.lr", "3.25e-05");
  a.set("autoencoder.decoder", "unet+ffl");
  a.set("denoiser.attention_resolutions", "8,4");
  a.set("denoiser.disable_space_moe", "true");
  a.set("run.seed", "18446744073709551615");
  const RunConfig b = config::parse_config(a.to_text());
  EXPECT_EQ(b.stage1.lr, 3.25e-5);
  EXPECT_EQ(b.ae.decoder, autoencoder::DecoderMode::unet_ffl);
  EXPECT_EQ(b.denoiser.unet.attention_resolutions, (std::vector<int>{8, 4}));
  EXPECT_TRUE(b.disable_space_moe);
  EXPECT_EQ(b.seed, 18446744073709551615ULL);
}

TEST(RunConfig, DoublesKeepEveryBit) {
  RunConfig a;
  a.set("stage1.beta_end", "0.1");
  a.stage1.beta_end = 0.1 + 1e-17 * 7;  // whatever the nearest double is
  const RunConfig b = config::parse_config(a.to_text());
  EXPECT_EQ(a.stage1.beta_end, b.stage1.beta_end);
}

TEST(RunConfig, CommentsAndWhitespace) {
  const auto cfg = config::parse_config(
      "# leading comment\n"
      "[stage1]\n"
      "  steps   =  17   ; trailing\n"
      "\n"
      "; another\n"
      "[run]\nseed=5\n");
  EXPECT_EQ(cfg.stage1.steps, 17);
  EXPECT_EQ(cfg.seed, 5u);
}

TEST(RunConfig, UnknownKeyRejected) {
  EXPECT_THROW(config::parse_config("[stage1]\nstepz = 3\n"), ConfigError);
  EXPECT_THROW(config::parse_config("[nosuch]\nsteps = 3\n"), ConfigError);
  RunConfig cfg;
  EXPECT_THROW(config::apply_override(cfg, "stage1.nope=1"), ConfigError);
}

TEST(RunConfig, MalformedInputRejected) {
  EXPECT_THROW(config::parse_config("steps = 3\n"), ConfigError);  // outside a section
  EXPECT_THROW(config::parse_config("[stage1]\nsteps = 3\nsteps = 4\n"), ConfigError);
  EXPECT_THROW(config::parse_config("[stage1]\nsteps = three\n"), ConfigError);
  EXPECT_THROW(config::parse_config("[stage1]\nsteps\n"), ConfigError);
  EXPECT_THROW(config::parse_config("[stage1\nsteps = 3\n"), ConfigError);
  EXPECT_THROW(config::parse_config("[autoencoder]\ndecoder = fancy\n"), ConfigError);
  EXPECT_THROW(config::parse_config("[stage1]\nmomentum_sharing = maybe\n"), ConfigError);
  RunConfig cfg;
  EXPECT_THROW(config::apply_override(cfg, "stage1.steps"), ConfigError);
}

TEST(RunConfig, ErrorNamesTheLine) {
  try {
    config::parse_config("[run]\nseed = 1\n[stage1]\nbogus = 2\n", "x.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("x.cfg:4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("stage1.bogus"), std::string::npos) << msg;
  }
}

TEST(RunConfig, OverrideAppliesValue) {
  RunConfig cfg;
  config::apply_override(cfg, "sampling.steps=50");
  config::apply_override(cfg, " stage2.lr = 5e-4 ");
  EXPECT_EQ(cfg.sample_steps, 50);
  EXPECT_EQ(cfg.stage2.lr, 5e-4);
}

TEST(RunConfig, ValidateCatchesInconsistentSizes) {
  RunConfig cfg;
  cfg.validate();
  cfg.hr_size = 60;  // not divisible into power-of-two latents
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  cfg.denoiser.T = 1002;  // not a multiple of the 4 sampling experts
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  cfg.stage1.steps = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(RunConfig, EffectiveDenoiserFollowsAutoencoderAndAblations) {
  RunConfig cfg;
  auto d = cfg.effective_denoiser();
  EXPECT_EQ(d.unet.in_channels, cfg.ae.z_channels + 3);
  EXPECT_EQ(d.unet.out_channels, cfg.ae.z_channels);
  EXPECT_EQ(d.unet.image_size, cfg.latent_size());
  EXPECT_EQ(d.num_sampling_experts, 4);
  EXPECT_EQ(d.unet.num_space_experts, 4);
  cfg.disable_sampling_moe = true;
  cfg.disable_space_moe = true;
  d = cfg.effective_denoiser();
  EXPECT_EQ(d.num_sampling_experts, 1);
  EXPECT_EQ(d.unet.num_space_experts, 1);
}

TEST(RunConfig, ShippedConfigsParseAndValidate) {
  for (const char* name : {"desk.cfg", "reference.cfg"}) {
    const auto cfg = config::load_config(std::string(SSMOE_SOURCE_DIR) + "/configs/" + name);
    EXPECT_NO_THROW(cfg.validate()) << name;
  }
  const auto desk = config::load_config(std::string(SSMOE_SOURCE_DIR) + "/configs/desk.cfg");
  EXPECT_EQ(desk.to_text(), RunConfig{}.to_text()) << "desk.cfg should spell out the built-in defaults";
}

TEST(RunConfig, MissingFileIsAnError) {
  EXPECT_THROW(config::load_config("/nonexistent/x.cfg"), ConfigError);
}
