#include "ssmoe/denoiser/unet.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ssmoe::denoiser {

void UNetConfig::validate() const {
  if (in_channels <= 0 || out_channels <= 0 || base_channels <= 0) {
    throw std::invalid_argument("unet: channel counts must be positive");
  }
  if (channel_mult.empty()) throw std::invalid_argument("unet: channel_multiplier must not be empty");
  if (num_res_blocks < 1) throw std::invalid_argument("unet: num_res_blocks must be at least 1");
  if (num_space_experts < 1) throw std::invalid_argument("unet: num_space_experts must be at least 1");
  if (image_size % (std::int64_t{1} << (depth() - 1)) != 0) {
    throw std::invalid_argument("unet: latent size " + std::to_string(image_size) + " not divisible by 2^" +
                                std::to_string(depth() - 1));
  }
  for (int r : attention_resolutions) {
    bool reachable = false;
    for (int i = 0; i < depth(); ++i) reachable |= (image_size >> i) == r;
    if (!reachable) {
      throw std::invalid_argument("unet: attention resolution " + std::to_string(r) +
                                  " is not a feature-map size for latent size " + std::to_string(image_size));
    }
  }
  for (int m : channel_mult) {
    if (m <= 0) throw std::invalid_argument("unet: channel multipliers must be positive");
    if (attention_resolutions.empty()) continue;
    if ((base_channels * m) % head_channels != 0) {
      throw std::invalid_argument("unet: head_channels " + std::to_string(head_channels) + " must divide " +
                                  std::to_string(base_channels * m));
    }
  }
}

bool UNetConfig::attention_at(std::int64_t resolution) const {
  return std::find(attention_resolutions.begin(), attention_resolutions.end(), resolution) !=
         attention_resolutions.end();
}

Tensor timestep_embedding(const std::vector<double>& t, std::int64_t dim, DType dt) {
  const std::int64_t half = dim / 2;
  std::vector<double> v(static_cast<std::size_t>(static_cast<std::int64_t>(t.size()) * dim), 0.0);
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::int64_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      v[b * static_cast<std::size_t>(dim) + static_cast<std::size_t>(k)] = std::cos(t[b] * freq);
      v[b * static_cast<std::size_t>(dim) + static_cast<std::size_t>(half + k)] = std::sin(t[b] * freq);
    }
  }
  return Tensor::from_values({static_cast<std::int64_t>(t.size()), dim}, v, dt);
}

ResBlock::ResBlock(std::int64_t in, std::int64_t out, std::int64_t temb, int groups, Rng& rng)
    : norm1(nn::norm_groups(in, groups), in),
      conv1(in, out, 3, rng),
      temb_proj(temb, out, rng),
      norm2(nn::norm_groups(out, groups), out),
      conv2(out, out, 3, rng) {
  register_module("norm1", norm1);
  register_module("conv1", conv1);
  register_module("temb_proj", temb_proj);
  register_module("norm2", norm2);
  register_module("conv2", conv2);
  if (in != out) {
    skip = std::make_unique<nn::Conv2d>(in, out, 1, rng);
    register_module("skip", *skip);
  }
}

Tensor ResBlock::forward(const Tensor& x, const Tensor& temb) const {
  Tensor h = conv1.forward(silu(norm1.forward(x)));
  Tensor e = temb_proj.forward(silu(temb));
  h = add(h, reshape(e, {e.dim(0), e.dim(1), 1, 1}));
  h = conv2.forward(silu(norm2.forward(h)));
  return add(skip ? skip->forward(x) : x, h);
}

AttentionMoeBlock::AttentionMoeBlock(std::int64_t channels, std::int64_t head_channels, int groups, int num_experts,
                                     double gamma, int ffn_mult, FfnActivation act, Rng& rng)
    : norm(nn::norm_groups(channels, groups), channels),
      qkv(channels, 3 * channels, rng),
      proj(channels, channels, rng),
      moe(channels, ffn_mult * channels, num_experts, gamma, rng, act),
      heads_(channels / head_channels) {
  register_module("norm", norm);
  register_module("qkv", qkv);
  register_module("proj", proj);
  register_module("moe", moe);
}

Tensor AttentionMoeBlock::forward(const Tensor& x, Rng* rng) const {
  const std::int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), l = h * w;
  const std::int64_t dh = c / heads_;
  auto to_tokens = [&](const Tensor& img) { return permute(reshape(img, {b, c, l}), {0, 2, 1}); };
  auto to_image = [&](const Tensor& tok) { return reshape(permute(tok, {0, 2, 1}), {b, c, h, w}); };
  auto split_heads = [&](const Tensor& t) {
    return reshape(permute(reshape(t, {b, l, heads_, dh}), {0, 2, 1, 3}), {b * heads_, l, dh});
  };

  Tensor q_k_v = qkv.forward(to_tokens(norm.forward(x)));
  Tensor q = split_heads(narrow(q_k_v, 2, 0, c));
  Tensor k = split_heads(narrow(q_k_v, 2, c, c));
  Tensor v = split_heads(narrow(q_k_v, 2, 2 * c, c));
  Tensor a = scaled_dot_product_attention(q, k, v);
  a = reshape(permute(reshape(a, {b, heads_, l, dh}), {0, 2, 1, 3}), {b, l, c});
  Tensor tokens = add(to_tokens(x), proj.forward(a));
  return to_image(moe.forward(tokens, rng));
}

Downsample::Downsample(std::int64_t ch, Rng& rng) : conv(ch, ch, 3, rng, 2, 1) { register_module("conv", conv); }

Upsample::Upsample(std::int64_t ch, Rng& rng) : conv(ch, ch, 3, rng) { register_module("conv", conv); }

UNet::UNet(const UNetConfig& cfg, Rng& rng)
    : cfg_(cfg),
      temb_dim_(4 * cfg.base_channels),
      time_fc1(cfg.base_channels, 4 * cfg.base_channels, rng),
      time_fc2(4 * cfg.base_channels, 4 * cfg.base_channels, rng),
      conv_in(cfg.in_channels, cfg.base_channels, 3, rng),
      norm_out(nn::norm_groups(cfg.base_channels * cfg.channel_mult[0], cfg.norm_groups),
               cfg.base_channels * cfg.channel_mult[0]),
      conv_out(cfg.base_channels * cfg.channel_mult[0], cfg.out_channels, 3, rng) {
  cfg_.validate();
  register_module("time_fc1", time_fc1);
  register_module("time_fc2", time_fc2);
  register_module("conv_in", conv_in);

  auto make_attn = [&](std::int64_t ch) {
    return std::make_unique<AttentionMoeBlock>(ch, cfg_.head_channels, cfg_.norm_groups, cfg_.num_space_experts,
                                               cfg_.gamma, cfg_.ffn_mult, cfg_.ffn_activation, rng);
  };

  const int depth = cfg_.depth();
  std::int64_t ch = cfg_.base_channels;
  std::int64_t res = cfg_.image_size;
  down_.resize(static_cast<std::size_t>(depth));
  for (int i = 0; i < depth; ++i) {
    auto& lv = down_[static_cast<std::size_t>(i)];
    const std::int64_t out = cfg_.base_channels * cfg_.channel_mult[static_cast<std::size_t>(i)];
    for (int j = 0; j < cfg_.num_res_blocks; ++j) {
      const std::string name = "down." + std::to_string(i) + "." + std::to_string(j);
      lv.res.push_back(std::make_unique<ResBlock>(ch, out, temb_dim_, cfg_.norm_groups, rng));
      register_module(name + ".res", *lv.res.back());
      ch = out;
      lv.attn.push_back(cfg_.attention_at(res) ? make_attn(ch) : nullptr);
      if (lv.attn.back()) register_module(name + ".attn", *lv.attn.back());
    }
    if (i + 1 < depth) {
      lv.down = std::make_unique<Downsample>(ch, rng);
      register_module("down." + std::to_string(i) + ".downsample", *lv.down);
      res /= 2;
    }
  }

  mid1_ = std::make_unique<ResBlock>(ch, ch, temb_dim_, cfg_.norm_groups, rng);
  register_module("mid.res1", *mid1_);
  if (cfg_.attention_at(res)) {
    mid_attn_ = make_attn(ch);
    register_module("mid.attn", *mid_attn_);
  }
  mid2_ = std::make_unique<ResBlock>(ch, ch, temb_dim_, cfg_.norm_groups, rng);
  register_module("mid.res2", *mid2_);

  up_.resize(static_cast<std::size_t>(depth));
  for (int i = depth - 1; i >= 0; --i) {
    auto& lv = up_[static_cast<std::size_t>(i)];
    const std::int64_t out = cfg_.base_channels * cfg_.channel_mult[static_cast<std::size_t>(i)];
    for (int j = 0; j < cfg_.num_res_blocks; ++j) {
      const std::string name = "up." + std::to_string(i) + "." + std::to_string(j);
      lv.res.push_back(std::make_unique<ResBlock>(ch + out, out, temb_dim_, cfg_.norm_groups, rng));
      register_module(name + ".res", *lv.res.back());
      ch = out;
      lv.attn.push_back(cfg_.attention_at(res) ? make_attn(ch) : nullptr);
      if (lv.attn.back()) register_module(name + ".attn", *lv.attn.back());
    }
    if (i > 0) {
      lv.up = std::make_unique<Upsample>(ch, rng);
      register_module("up." + std::to_string(i) + ".upsample", *lv.up);
      res *= 2;
    }
  }
  register_module("norm_out", norm_out);
  register_module("conv_out", conv_out);
  conv_out.zero_init();
}

std::vector<SpaceMoeLayer*> UNet::moe_layers() const {
  std::vector<SpaceMoeLayer*> out;
  auto collect = [&](const std::vector<Level>& levels) {
    for (const auto& lv : levels) {
      for (const auto& a : lv.attn) {
        if (a) out.push_back(&a->moe);
      }
    }
  };
  collect(down_);
  if (mid_attn_) out.push_back(&mid_attn_->moe);
  collect(up_);
  return out;
}

Tensor UNet::forward(const Tensor& x, const std::vector<double>& t, Rng* rng) const {
  if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels) {
    throw TensorError("unet: expected [B, " + std::to_string(cfg_.in_channels) + ", H, W] input, got " +
                      shape_str(x.shape()));
  }
  const std::int64_t div = std::int64_t{1} << (cfg_.depth() - 1);
  if (x.dim(2) % div != 0 || x.dim(3) % div != 0) {
    throw TensorError("unet: spatial size " + shape_str(x.shape()) + " not divisible by " + std::to_string(div));
  }
  if (static_cast<std::int64_t>(t.size()) != x.dim(0)) throw TensorError("unet: need one timestep per sample");

  Tensor temb = timestep_embedding(t, cfg_.base_channels, x.dtype());
  temb = time_fc2.forward(silu(time_fc1.forward(temb)));

  Tensor h = conv_in.forward(x);
  std::vector<Tensor> skips;
  for (const auto& lv : down_) {
    for (std::size_t j = 0; j < lv.res.size(); ++j) {
      h = lv.res[j]->forward(h, temb);
      if (lv.attn[j]) h = lv.attn[j]->forward(h, rng);
      skips.push_back(h);
    }
    if (lv.down) h = lv.down->forward(h);
  }
  h = mid1_->forward(h, temb);
  if (mid_attn_) h = mid_attn_->forward(h, rng);
  h = mid2_->forward(h, temb);
  for (int i = cfg_.depth() - 1; i >= 0; --i) {
    const auto& lv = up_[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < lv.res.size(); ++j) {
      h = concat({h, skips.back()}, 1);
      skips.pop_back();
      h = lv.res[j]->forward(h, temb);
      if (lv.attn[j]) h = lv.attn[j]->forward(h, rng);
    }
    if (lv.up) h = lv.up->forward(h);
  }
  return conv_out.forward(silu(norm_out.forward(h)));
}

}  // namespace ssmoe::denoiser
