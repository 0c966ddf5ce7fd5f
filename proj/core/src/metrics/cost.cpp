#include "ssmoe/metrics/cost.hpp"

#include <stdexcept>

namespace ssmoe::metrics {

namespace {

using u64 = std::uint64_t;

u64 U(std::int64_t v) { return static_cast<u64>(v); }

// Mirrors the module layout of denoiser::UNet, one forward pass at batch b.
class UNetCounter {
 public:
  UNetCounter(const denoiser::UNetConfig& cfg, MoeMode mode, std::int64_t batch)
      : cfg_(cfg), mode_(mode), b_(batch) {}

  std::vector<CostEntry> run(std::int64_t size) {
    const std::int64_t base = cfg_.base_channels, temb = 4 * base;
    linear("time_fc1", base, temb, 1);
    linear("time_fc2", temb, temb, 1);
    conv("conv_in", cfg_.in_channels, base, 3, size);

    std::int64_t ch = base, res = size;
    std::vector<std::int64_t> skips;
    for (int i = 0; i < cfg_.depth(); ++i) {
      const std::int64_t out = base * cfg_.channel_mult[static_cast<std::size_t>(i)];
      for (int j = 0; j < cfg_.num_res_blocks; ++j) {
        const std::string name = "down." + std::to_string(i) + "." + std::to_string(j);
        resblock(name + ".res", ch, out, temb, res);
        ch = out;
        if (cfg_.attention_at(res)) attention(name + ".attn", ch, res);
        skips.push_back(ch);
      }
      if (i + 1 < cfg_.depth()) {
        res /= 2;
        conv("down." + std::to_string(i) + ".downsample.conv", ch, ch, 3, res);
      }
    }
    resblock("mid.res1", ch, ch, temb, res);
    if (cfg_.attention_at(res)) attention("mid.attn", ch, res);
    resblock("mid.res2", ch, ch, temb, res);
    for (int i = cfg_.depth() - 1; i >= 0; --i) {
      const std::int64_t out = base * cfg_.channel_mult[static_cast<std::size_t>(i)];
      for (int j = 0; j < cfg_.num_res_blocks; ++j) {
        const std::string name = "up." + std::to_string(i) + "." + std::to_string(j);
        resblock(name + ".res", ch + skips.back(), out, temb, res);
        skips.pop_back();
        ch = out;
        if (cfg_.attention_at(res)) attention(name + ".attn", ch, res);
      }
      if (i > 0) {
        res *= 2;
        conv("up." + std::to_string(i) + ".upsample.conv", ch, ch, 3, res);
      }
    }
    norm("norm_out", ch, res * res);
    conv("conv_out", ch, cfg_.out_channels, 3, res);
    return std::move(entries_);
  }

 private:
  void add(std::string name, const char* kind, u64 params, u64 macs) {
    entries_.push_back({std::move(name), kind, params, macs});
  }
  // out_res is the output feature-map size.
  void conv(const std::string& name, std::int64_t in, std::int64_t out, int k, std::int64_t out_res) {
    add(name, "conv", U(out * in * k * k + out), U(b_ * out_res * out_res * out * in * k * k));
  }
  void linear(const std::string& name, std::int64_t in, std::int64_t out, std::int64_t rows_per_sample) {
    add(name, "linear", U(in * out + out), U(b_ * rows_per_sample * in * out));
  }
  void norm(const std::string& name, std::int64_t ch, std::int64_t spatial) {
    add(name, "norm", U(2 * ch), U(b_ * ch * spatial));
  }
  void resblock(const std::string& name, std::int64_t in, std::int64_t out, std::int64_t temb, std::int64_t res) {
    norm(name + ".norm1", in, res * res);
    conv(name + ".conv1", in, out, 3, res);
    linear(name + ".temb_proj", temb, out, 1);
    norm(name + ".norm2", out, res * res);
    conv(name + ".conv2", out, out, 3, res);
    if (in != out) conv(name + ".skip", in, out, 1, res);
  }
  void attention(const std::string& name, std::int64_t c, std::int64_t res) {
    const std::int64_t l = res * res, hidden = cfg_.ffn_mult * c;
    norm(name + ".norm", c, l);
    linear(name + ".qkv", c, 3 * c, l);
    // QKᵀ and AV over all heads: 2 · L² · C per sample.
    add(name + ".sdpa", "attention", 0, U(2 * b_ * l * l * c));
    linear(name + ".proj", c, c, l);
    add(name + ".moe.norm", "norm", U(2 * c), U(b_ * l * c));
    const int n = cfg_.num_space_experts;
    const u64 ffn_params = U(c * hidden + hidden + hidden * c + c);
    const u64 ffn_macs_per_row = U(2 * c * hidden);
    if (mode_ == MoeMode::merged || n == 1) {
      add(name + ".moe.ffn", "ffn", ffn_params, U(b_ * l) * ffn_macs_per_row);
    } else {
      const std::int64_t group = (l + n - 1) / n;
      add(name + ".moe.experts", "ffn", U(n) * ffn_params, U(n) * U(b_ * group) * ffn_macs_per_row);
    }
  }

  const denoiser::UNetConfig& cfg_;
  MoeMode mode_;
  std::int64_t b_;
  std::vector<CostEntry> entries_;
};

}  // namespace

std::string to_string(MoeMode m) { return m == MoeMode::routed ? "routed" : "merged"; }

CostReport count_cost(const denoiser::DenoiserConfig& cfg, const std::vector<std::int64_t>& latent_shape,
                      MoeMode mode, int sampling_steps) {
  cfg.unet.validate();
  if (latent_shape.size() != 4 || latent_shape[0] < 1) {
    throw std::invalid_argument("count_cost: latent shape must be [B, C, h, w]");
  }
  const std::int64_t b = latent_shape[0], c = latent_shape[1], h = latent_shape[2], w = latent_shape[3];
  if (h != w) throw std::invalid_argument("count_cost: square latents only");
  if (c + 3 != cfg.unet.in_channels || c != cfg.unet.out_channels) {
    throw std::invalid_argument("count_cost: latent channels " + std::to_string(c) + " do not fit the network");
  }
  if (h % (std::int64_t{1} << (cfg.unet.depth() - 1)) != 0) {
    throw std::invalid_argument("count_cost: latent size not divisible by the UNet depth");
  }
  if (sampling_steps < 0 || cfg.num_sampling_experts < 1) throw std::invalid_argument("count_cost: bad step/stage counts");

  CostReport r;
  r.mode = mode;
  r.num_stages = cfg.num_sampling_experts;
  r.sampling_steps = sampling_steps;
  r.layers = UNetCounter(cfg.unet, mode, b).run(h);
  u64 unet_params = 0;
  for (const auto& e : r.layers) {
    unet_params += e.params;
    r.flops_per_step += e.macs;
  }
  r.param_count = U(cfg.num_sampling_experts) * unet_params;
  r.total_flops = r.flops_per_step * U(sampling_steps);
  return r;
}

denoiser::DenoiserConfig single_ffn_baseline(const denoiser::DenoiserConfig& cfg) {
  denoiser::DenoiserConfig single = cfg;
  single.num_sampling_experts = 1;
  single.unet.num_space_experts = 1;
  return single;
}

}  // namespace ssmoe::metrics
