#pragma once

#include <memory>
#include <vector>

#include "ssmoe/denoiser/space_moe.hpp"
#include "ssmoe/nn/layers.hpp"

namespace ssmoe::denoiser {

struct UNetConfig {
  std::int64_t in_channels = 6;
  std::int64_t out_channels = 3;
  std::int64_t base_channels = 32;
  std::vector<int> channel_mult{1, 2};
  /// Feature-map sizes (pixels) at which attention + Space-MoE blocks run.
  std::vector<int> attention_resolutions{8};
  std::int64_t head_channels = 16;
  int num_res_blocks = 1;
  int num_space_experts = 4;
  double gamma = 0.999;
  int ffn_mult = 4;
  int norm_groups = 8;
  /// Latent spatial size the network is built for.
  std::int64_t image_size = 16;
  FfnActivation ffn_activation = FfnActivation::gelu;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
  int depth() const { return static_cast<int>(channel_mult.size()); }
  bool attention_at(std::int64_t resolution) const;
};

/// Sinusoidal embedding of (possibly fractional) timesteps: [B, dim].
Tensor timestep_embedding(const std::vector<double>& t, std::int64_t dim, DType dt = DType::f32);

class ResBlock : public nn::Module {
 public:
  ResBlock(std::int64_t in, std::int64_t out, std::int64_t temb, int groups, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& temb) const;

  nn::GroupNorm norm1;
  nn::Conv2d conv1;
  nn::Linear temb_proj;
  nn::GroupNorm norm2;
  nn::Conv2d conv2;
  std::unique_ptr<nn::Conv2d> skip;
};

/// Multi-head self-attention over spatial tokens followed by a Space-MoE FFN,
/// each with a residual connection.
class AttentionMoeBlock : public nn::Module {
 public:
  AttentionMoeBlock(std::int64_t channels, std::int64_t head_channels, int groups, int num_experts, double gamma,
                    int ffn_mult, FfnActivation act, Rng& rng);
  Tensor forward(const Tensor& x, Rng* rng) const;

  nn::GroupNorm norm;
  nn::Linear qkv;
  nn::Linear proj;
  SpaceMoeLayer moe;

 private:
  std::int64_t heads_;
};

class Downsample : public nn::Module {
 public:
  Downsample(std::int64_t ch, Rng& rng);
  Tensor forward(const Tensor& x) const { return conv.forward(x); }
  nn::Conv2d conv;
};

class Upsample : public nn::Module {
 public:
  Upsample(std::int64_t ch, Rng& rng);
  Tensor forward(const Tensor& x) const { return conv.forward(upsample_nearest2x(x)); }
  nn::Conv2d conv;
};

/// Conditional denoising UNet: residual blocks, attention + Space-MoE at the
/// configured resolutions, skip connections, zero-initialized output conv.
class UNet : public nn::Module {
 public:
  UNet(const UNetConfig& cfg, Rng& rng);

  /// x: [B, in_channels, H, W]; t: one timestep per sample.
  Tensor forward(const Tensor& x, const std::vector<double>& t, Rng* rng) const;

  const UNetConfig& config() const { return cfg_; }
  std::vector<SpaceMoeLayer*> moe_layers() const;

 private:
  struct Level {
    std::vector<std::unique_ptr<ResBlock>> res;
    std::vector<std::unique_ptr<AttentionMoeBlock>> attn;  // parallel to res; entries may be null
    std::unique_ptr<Downsample> down;
    std::unique_ptr<Upsample> up;
  };

  UNetConfig cfg_;
  std::int64_t temb_dim_;
  nn::Linear time_fc1, time_fc2;
  nn::Conv2d conv_in;
  std::vector<Level> down_;
  std::unique_ptr<ResBlock> mid1_, mid2_;
  std::unique_ptr<AttentionMoeBlock> mid_attn_;
  std::vector<Level> up_;
  nn::GroupNorm norm_out;
  nn::Conv2d conv_out;
};

}  // namespace ssmoe::denoiser
