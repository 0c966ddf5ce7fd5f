#include "ssmoe/autoencoder/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ssmoe/data/image.hpp"
#include "ssmoe/nn/layers.hpp"

namespace ssmoe::autoencoder {

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

const std::string& meta_get(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw std::runtime_error("checkpoint: missing metadata key '" + key + "'");
  return it->second;
}

std::int64_t level_channels(const AeConfig& c, int level) {
  return c.channels * c.channel_mult[static_cast<std::size_t>(level)];
}

Tensor rows_of(const Tensor& batch, const std::vector<std::int64_t>& idx) {
  Shape rest(batch.shape().begin() + 1, batch.shape().end());
  Tensor flat = reshape(batch, {batch.dim(0), numel_of(rest)});
  Shape out = rest;
  out.insert(out.begin(), static_cast<std::int64_t>(idx.size()));
  return reshape(gather_rows(flat, idx), out);
}

struct Accumulator {
  double total = 0, l1 = 0, vq = 0, freq = 0;
  int n = 0;
  void add(double t, const LossParts& p) {
    total += t;
    l1 += p.l1;
    vq += p.vq;
    freq += p.freq;
    ++n;
  }
  LossRecord flush(int step) {
    LossRecord r{step, total / n, l1 / n, vq / n, freq / n};
    *this = {};
    return r;
  }
};

template <class StepFn>
std::vector<LossRecord> run_loop(const char* stage, int steps, int log_interval, nn::Adam& opt, const LossHook& hook,
                                 StepFn&& compute) {
  std::vector<LossRecord> log;
  Accumulator acc;
  for (int step = 1; step <= steps; ++step) {
    LossParts parts = compute();
    const double value = parts.total.item();
    if (!std::isfinite(value)) {
      throw nn::TrainingError(std::string(stage) + ": non-finite loss " + std::to_string(value) + " at step " +
                              std::to_string(step) + " (l1 " + std::to_string(parts.l1) + ", freq " +
                              std::to_string(parts.freq) + ", last grad norm " +
                              std::to_string(opt.last_grad_norm()) + ")");
    }
    opt.zero_grad();
    parts.total.backward();
    opt.step();
    acc.add(value, parts);
    if (hook) hook(step, parts);
    if (log_interval > 0 && step % log_interval == 0) log.push_back(acc.flush(step));
  }
  return log;
}

/// Moves every entry with zero usage onto a random row of `z_flat`. The
/// current step's quantization is left as computed.
void restart_dead_codes(VectorQuantizer& vq, const std::vector<std::int64_t>& usage, const Tensor& z_flat, Rng& rng) {
  const auto rows = z_flat.to_vector();
  const std::int64_t m = z_flat.dim(0), d = z_flat.dim(1);
  auto book = vq.codebook.to_vector();
  bool changed = false;
  for (std::size_t k = 0; k < usage.size(); ++k) {
    if (usage[k] != 0) continue;
    const std::int64_t r = rng.randint(0, m);
    for (std::int64_t c = 0; c < d; ++c)
      book[k * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)] = rows[static_cast<std::size_t>(r * d + c)];
    changed = true;
  }
  if (changed) vq.codebook.copy_from(Tensor::from_values(vq.codebook.shape(), book, vq.codebook.dtype()));
}

}  // namespace

DecoderMode parse_decoder_mode(const std::string& s) {
  if (s == "baseline") return DecoderMode::baseline;
  if (s == "aff") return DecoderMode::aff;
  if (s == "ffl") return DecoderMode::ffl;
  if (s == "unet+ffl") return DecoderMode::unet_ffl;
  if (s == "aff+ffl") return DecoderMode::aff_ffl;
  throw std::invalid_argument("decoder mode '" + s + "' is not one of baseline, aff, ffl, unet+ffl, aff+ffl");
}

std::string to_string(DecoderMode m) {
  switch (m) {
    case DecoderMode::baseline: return "baseline";
    case DecoderMode::aff: return "aff";
    case DecoderMode::ffl: return "ffl";
    case DecoderMode::unet_ffl: return "unet+ffl";
    case DecoderMode::aff_ffl: return "aff+ffl";
  }
  return "?";
}

void AeConfig::validate() const {
  if (in_channels < 1 || channels < 1 || z_channels < 1 || embed_dim < 1 || n_embed < 1) {
    throw std::invalid_argument("autoencoder: channel counts and codebook size must be positive");
  }
  if (channel_mult.empty()) throw std::invalid_argument("autoencoder: channel_multiplier must not be empty");
  for (int m : channel_mult) {
    if (m <= 0) throw std::invalid_argument("autoencoder: channel multipliers must be positive");
    if ((channels * m) % norm_groups != 0) {
      throw std::invalid_argument("autoencoder: norm groups " + std::to_string(norm_groups) + " must divide " +
                                  std::to_string(channels * m) + " channels");
    }
  }
  if (num_res_blocks < 1) throw std::invalid_argument("autoencoder: num_res_blocks must be at least 1");
  if (num_fusion_layers < 0 || num_fusion_layers > static_cast<int>(channel_mult.size())) {
    throw std::invalid_argument("autoencoder: num_fusion_layers must be in 0.." + std::to_string(channel_mult.size()));
  }
  if (num_aff_blocks < 0) throw std::invalid_argument("autoencoder: num_aff_blocks must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("autoencoder: dropout outside [0, 1)");
  if (ffl.lambda < 0.0) throw std::invalid_argument("autoencoder: ffl_lambda must be non-negative");
}

ResnetBlock::ResnetBlock(std::int64_t in, std::int64_t out, int groups, double dropout, Rng& rng)
    : norm1(groups, in), conv1(in, out, 3, rng), norm2(groups, out), conv2(out, out, 3, rng), dropout_(dropout) {
  register_module("norm1", norm1);
  register_module("conv1", conv1);
  register_module("norm2", norm2);
  register_module("conv2", conv2);
  if (in != out) {
    skip = std::make_unique<nn::Conv2d>(in, out, 1, rng);
    register_module("skip", *skip);
  }
}

Tensor ResnetBlock::forward(const Tensor& x, Rng* rng) const {
  Tensor h = conv1.forward(silu(norm1.forward(x)));
  h = silu(norm2.forward(h));
  if (rng && dropout_ > 0.0) h = dropout(h, dropout_, *rng);
  h = conv2.forward(h);
  return add(skip ? skip->forward(x) : x, h);
}

Encoder::Encoder(const AeConfig& cfg, Rng& rng)
    : conv_in_(cfg.in_channels, cfg.channels, 3, rng),
      norm_out_(cfg.norm_groups, level_channels(cfg, cfg.channel_mult.size() - 1)),
      conv_out_(level_channels(cfg, cfg.channel_mult.size() - 1), cfg.z_channels, 3, rng) {
  register_module("conv_in", conv_in_);
  std::int64_t ch = cfg.channels;
  const int depth = static_cast<int>(cfg.channel_mult.size());
  blocks_.resize(static_cast<std::size_t>(depth));
  for (int i = 0; i < depth; ++i) {
    const std::int64_t out = level_channels(cfg, i);
    for (int j = 0; j < cfg.num_res_blocks; ++j) {
      auto& b = blocks_[static_cast<std::size_t>(i)];
      b.push_back(std::make_unique<ResnetBlock>(ch, out, cfg.norm_groups, cfg.dropout, rng));
      register_module("down." + std::to_string(i) + ".block." + std::to_string(j), *b.back());
      ch = out;
    }
    if (i + 1 < depth) {
      down_.push_back(std::make_unique<nn::Conv2d>(ch, ch, 3, rng, 2, 1));
      register_module("down." + std::to_string(i) + ".downsample", *down_.back());
    }
  }
  mid1_ = std::make_unique<ResnetBlock>(ch, ch, cfg.norm_groups, cfg.dropout, rng);
  mid2_ = std::make_unique<ResnetBlock>(ch, ch, cfg.norm_groups, cfg.dropout, rng);
  register_module("mid.0", *mid1_);
  register_module("mid.1", *mid2_);
  register_module("norm_out", norm_out_);
  register_module("conv_out", conv_out_);
}

Tensor Encoder::forward(const Tensor& x, Rng* rng) const {
  Tensor h = conv_in_.forward(x);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    for (const auto& b : blocks_[i]) h = b->forward(h, rng);
    if (i < down_.size()) h = down_[i]->forward(h);
  }
  h = mid2_->forward(mid1_->forward(h, rng), rng);
  return conv_out_.forward(silu(norm_out_.forward(h)));
}

LrExtractor::LrExtractor(const AeConfig& cfg, int levels, Rng& rng) : conv_in_(cfg.in_channels, cfg.channels, 3, rng) {
  register_module("conv_in", conv_in_);
  std::int64_t ch = cfg.channels;
  blocks_.resize(static_cast<std::size_t>(levels));
  for (int i = 0; i < levels; ++i) {
    const std::int64_t out = level_channels(cfg, i);
    for (int j = 0; j < cfg.num_res_blocks; ++j) {
      auto& b = blocks_[static_cast<std::size_t>(i)];
      b.push_back(std::make_unique<ResnetBlock>(ch, out, cfg.norm_groups, cfg.dropout, rng));
      register_module("level." + std::to_string(i) + ".block." + std::to_string(j), *b.back());
      ch = out;
    }
    if (i + 1 < levels) {
      down_.push_back(std::make_unique<nn::Conv2d>(ch, ch, 3, rng, 2, 1));
      register_module("level." + std::to_string(i) + ".downsample", *down_.back());
    }
  }
}

std::vector<Tensor> LrExtractor::forward(const Tensor& lr_up, Rng* rng) const {
  std::vector<Tensor> feats;
  Tensor h = conv_in_.forward(lr_up);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    for (const auto& b : blocks_[i]) h = b->forward(h, rng);
    feats.push_back(h);
    if (i < down_.size()) h = down_[i]->forward(h);
  }
  return feats;
}

Decoder::Decoder(const AeConfig& cfg, Rng& rng)
    : conv_in_(cfg.z_channels, level_channels(cfg, cfg.channel_mult.size() - 1), 3, rng),
      norm_out_(cfg.norm_groups, cfg.channels),
      conv_out_(cfg.channels, cfg.in_channels, 3, rng) {
  const int depth = static_cast<int>(cfg.channel_mult.size());
  std::int64_t ch = level_channels(cfg, depth - 1);
  register_module("conv_in", conv_in_);
  mid1_ = std::make_unique<ResnetBlock>(ch, ch, cfg.norm_groups, cfg.dropout, rng);
  mid2_ = std::make_unique<ResnetBlock>(ch, ch, cfg.norm_groups, cfg.dropout, rng);
  register_module("mid.0", *mid1_);
  register_module("mid.1", *mid2_);
  blocks_.resize(static_cast<std::size_t>(depth));
  up_.resize(static_cast<std::size_t>(depth));
  const int fusion_levels = cfg.uses_fusion() ? cfg.num_fusion_layers : 0;
  fusion_.resize(static_cast<std::size_t>(fusion_levels));
  for (int i = depth - 1; i >= 0; --i) {
    const std::string base = "up." + std::to_string(i);
    const std::int64_t out = level_channels(cfg, i);
    for (int j = 0; j < cfg.num_res_blocks; ++j) {
      auto& b = blocks_[static_cast<std::size_t>(i)];
      b.push_back(std::make_unique<ResnetBlock>(ch, out, cfg.norm_groups, cfg.dropout, rng));
      register_module(base + ".block." + std::to_string(j), *b.back());
      ch = out;
    }
    if (i < fusion_levels) {
      fusion_[static_cast<std::size_t>(i)] = std::make_unique<FusionBlock>(ch, cfg.norm_groups, rng);
      register_module(base + ".fusion", *fusion_[static_cast<std::size_t>(i)]);
    }
    if (i > 0) {
      up_[static_cast<std::size_t>(i)] = std::make_unique<nn::Conv2d>(ch, ch, 3, rng);
      register_module(base + ".upsample", *up_[static_cast<std::size_t>(i)]);
    }
  }
  if (cfg.uses_aff()) {
    for (int k = 0; k < cfg.num_aff_blocks; ++k) {
      aff_.push_back(std::make_unique<AffBlock>(ch, rng));
      register_module("refine.aff." + std::to_string(k), *aff_.back());
    }
  } else if (cfg.uses_refine_unet()) {
    refine_unet_ = std::make_unique<RefineUNet>(ch, cfg.norm_groups, rng);
    register_module("refine.unet", *refine_unet_);
  }
  register_module("norm_out", norm_out_);
  register_module("conv_out", conv_out_);
}

std::vector<AffBlock*> Decoder::aff_blocks() const {
  std::vector<AffBlock*> out;
  for (const auto& a : aff_) out.push_back(a.get());
  return out;
}

Tensor Decoder::forward(const Tensor& z, const std::vector<Tensor>& lr_features, Rng* rng) const {
  if (lr_features.size() != fusion_.size()) {
    throw TensorError("decoder: expected " + std::to_string(fusion_.size()) + " lr feature maps, got " +
                      std::to_string(lr_features.size()));
  }
  Tensor h = conv_in_.forward(z);
  h = mid2_->forward(mid1_->forward(h, rng), rng);
  for (int i = static_cast<int>(blocks_.size()) - 1; i >= 0; --i) {
    const auto k = static_cast<std::size_t>(i);
    for (const auto& b : blocks_[k]) h = b->forward(h, rng);
    if (k < fusion_.size()) h = fusion_[k]->forward(lr_features[k], h);
    if (i > 0) h = up_[k]->forward(upsample_nearest2x(h));
  }
  for (const auto& a : aff_) h = a->forward(h);
  if (refine_unet_) h = refine_unet_->forward(h);
  return conv_out_.forward(silu(norm_out_.forward(h)));
}

Autoencoder::Autoencoder(const AeConfig& cfg, Rng& rng)
    : cfg_((cfg.validate(), cfg)),
      encoder_(cfg, rng),
      quant_conv_(cfg.z_channels, cfg.embed_dim, 1, rng),
      quantizer_(cfg.n_embed, cfg.embed_dim, rng),
      post_quant_conv_(cfg.embed_dim, cfg.z_channels, 1, rng),
      decoder_(cfg, rng) {
  register_module("encoder", encoder_);
  register_module("quant_conv", quant_conv_);
  register_module("quantize", quantizer_);
  register_module("post_quant_conv", post_quant_conv_);
  register_module("decoder", decoder_);
  if (cfg.uses_fusion()) {
    lr_extractor_ = std::make_unique<LrExtractor>(cfg, cfg.num_fusion_layers, rng);
    register_module("lr_extractor", *lr_extractor_);
  }
}

Tensor Autoencoder::encode(const Tensor& img, Rng* rng) const {
  const int f = cfg_.downsample_factor();
  if (img.ndim() != 4 || img.dim(1) != cfg_.in_channels || img.dim(2) % f != 0 || img.dim(3) % f != 0) {
    throw TensorError("encode: expected [B, " + std::to_string(cfg_.in_channels) + ", H, W] with H, W divisible by " +
                      std::to_string(f) + ", got " + shape_str(img.shape()));
  }
  return encoder_.forward(img, rng);
}

VqResult Autoencoder::quantize(const Tensor& z) const { return quantizer_.quantize(quant_conv_.forward(z)); }

Tensor Autoencoder::decode(const Tensor& z_q, const Tensor& lr, Rng* rng) const {
  if (z_q.ndim() != 4 || z_q.dim(1) != cfg_.embed_dim) {
    throw TensorError("decode: expected [B, " + std::to_string(cfg_.embed_dim) + ", h, w] codes, got " +
                      shape_str(z_q.shape()));
  }
  std::vector<Tensor> feats;
  if (lr_extractor_) {
    const std::int64_t oh = z_q.dim(2) * cfg_.downsample_factor(), ow = z_q.dim(3) * cfg_.downsample_factor();
    if (!lr.defined() || lr.ndim() != 4 || lr.dim(0) != z_q.dim(0) || lr.dim(1) != cfg_.in_channels ||
        oh % lr.dim(2) != 0 || ow % lr.dim(3) != 0 || oh / lr.dim(2) != ow / lr.dim(3)) {
      throw TensorError("decode: lr " + (lr.defined() ? shape_str(lr.shape()) : std::string("(missing)")) +
                        " inconsistent with latent " + shape_str(z_q.shape()));
    }
    Tensor lr_up = data::bicubic_resize(lr.detach(), oh, ow, true);
    feats = lr_extractor_->forward(lr_up, rng);
  }
  return decoder_.forward(post_quant_conv_.forward(z_q), feats, rng);
}

Tensor Autoencoder::decode_latent(const Tensor& z, const Tensor& lr, Rng* rng) const {
  return decode(quantize(z).z_q, lr, rng);
}

std::vector<std::pair<std::string, Tensor*>> Autoencoder::decoding_parameters() const {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& p : post_quant_conv_.named_parameters("post_quant_conv")) out.push_back(p);
  for (auto& p : decoder_.named_parameters("decoder")) out.push_back(p);
  if (lr_extractor_)
    for (auto& p : lr_extractor_->named_parameters("lr_extractor")) out.push_back(p);
  return out;
}

LossParts reconstruction_loss(const AeConfig& cfg, const Tensor& target, const Tensor& recon, const VqResult& vq,
                              double commitment_beta, bool with_freq) {
  LossParts p;
  Tensor l1 = mean(abs(sub(target, recon)));
  Tensor vq_term = add(vq.codebook_loss, mul_scalar(vq.commitment_loss, commitment_beta));
  p.total = add(l1, vq_term);
  p.l1 = l1.item();
  p.vq = vq_term.item();
  if (with_freq && cfg.ffl.lambda > 0.0) {
    Tensor freq = focal_frequency_loss(target, recon, cfg.ffl);
    p.freq = freq.item();
    p.total = add(p.total, mul_scalar(freq, cfg.ffl.lambda));
  }
  return p;
}

std::vector<LossRecord> train_ae(Autoencoder& ae, const Tensor& hr, int lr_scale, const AeTrainConfig& cfg,
                                 const LossHook& hook) {
  if (!hr.defined() || hr.dim(0) == 0) throw nn::TrainingError("train-ae: empty dataset");
  nn::Adam opt(ae.named_parameters(), nn::AdamConfig{.lr = cfg.lr, .clip_norm = cfg.clip_norm});
  Rng rng(mix_seed(cfg.seed, 0xae));
  const std::int64_t lh = hr.dim(2) / lr_scale, lw = hr.dim(3) / lr_scale;
  std::vector<std::int64_t> usage(static_cast<std::size_t>(ae.quantizer().num_entries()), 0);
  int step = 0;
  return run_loop("train-ae", cfg.steps, cfg.log_interval, opt, hook, [&] {
    ++step;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(cfg.batch_size));
    for (auto& i : idx) i = rng.randint(0, hr.dim(0));
    Tensor x = rows_of(hr, idx);
    Tensor lr;
    if (ae.config().uses_fusion()) lr = data::bicubic_resize(x, lh, lw, true);
    VqResult vq = ae.quantize(ae.encode(x, &rng));
    for (auto k : vq.indices) ++usage[static_cast<std::size_t>(k)];
    if (cfg.dead_code_restart > 0 && step % cfg.dead_code_restart == 0) {
      restart_dead_codes(ae.quantizer(), usage, vq.z_flat, rng);
      std::fill(usage.begin(), usage.end(), 0);
    }
    Tensor recon = ae.decode(vq.z_q, lr, &rng);
    return reconstruction_loss(ae.config(), x, recon, vq, cfg.commitment_beta, ae.config().uses_ffl());
  });
}

std::vector<LossRecord> train_stage2(Autoencoder& ae, const PairDataset& data, const Stage2Config& cfg,
                                     const LossHook& hook) {
  if (data.size() == 0) throw nn::TrainingError("stage2: empty dataset");
  if (data.latent.dim(0) != data.size() || data.hr.dim(0) != data.size()) {
    throw nn::TrainingError("stage2: lr, latent and hr counts differ");
  }
  // Encoder and codebook stay frozen; only the decoding path is optimized.
  ae.encoder().set_requires_grad(false);
  ae.quantizer().set_requires_grad(false);
  nn::Adam opt(ae.decoding_parameters(), nn::AdamConfig{.lr = cfg.lr, .clip_norm = cfg.clip_norm});
  Rng rng(mix_seed(cfg.seed, 0x5e2));
  return run_loop("stage2", cfg.steps, cfg.log_interval, opt, hook, [&] {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(cfg.batch_size));
    for (auto& i : idx) i = rng.randint(0, data.size());
    Tensor lr = rows_of(data.lr, idx);
    VqResult vq = ae.quantize(rows_of(data.latent, idx));
    Tensor recon = ae.decode(vq.z_q, lr, &rng);
    return reconstruction_loss(ae.config(), rows_of(data.hr, idx), recon, vq, cfg.commitment_beta,
                               ae.config().uses_ffl());
  });
}

void write_ae_config(const AeConfig& c, std::map<std::string, std::string>& meta) {
  meta["ae.in_channels"] = std::to_string(c.in_channels);
  meta["ae.channels"] = std::to_string(c.channels);
  meta["ae.channel_multiplier"] = join_ints(c.channel_mult);
  meta["ae.num_res_blocks"] = std::to_string(c.num_res_blocks);
  meta["ae.z_channels"] = std::to_string(c.z_channels);
  meta["ae.embed_dim"] = std::to_string(c.embed_dim);
  meta["ae.n_embed"] = std::to_string(c.n_embed);
  std::ostringstream d;
  d.precision(17);
  d << c.dropout;
  meta["ae.dropout"] = d.str();
  meta["ae.norm_groups"] = std::to_string(c.norm_groups);
  meta["ae.num_fusion_layers"] = std::to_string(c.num_fusion_layers);
  meta["ae.num_aff_blocks"] = std::to_string(c.num_aff_blocks);
  meta["ae.decoder"] = to_string(c.decoder);
  std::ostringstream l, a;
  l.precision(17);
  a.precision(17);
  l << c.ffl.lambda;
  a << c.ffl.alpha;
  meta["ae.ffl_lambda"] = l.str();
  meta["ae.ffl_alpha"] = a.str();
}

AeConfig read_ae_config(const std::map<std::string, std::string>& meta) {
  AeConfig c;
  c.in_channels = std::stoll(meta_get(meta, "ae.in_channels"));
  c.channels = std::stoll(meta_get(meta, "ae.channels"));
  c.channel_mult = split_ints(meta_get(meta, "ae.channel_multiplier"));
  c.num_res_blocks = std::stoi(meta_get(meta, "ae.num_res_blocks"));
  c.z_channels = std::stoll(meta_get(meta, "ae.z_channels"));
  c.embed_dim = std::stoll(meta_get(meta, "ae.embed_dim"));
  c.n_embed = std::stoll(meta_get(meta, "ae.n_embed"));
  c.dropout = std::stod(meta_get(meta, "ae.dropout"));
  c.norm_groups = std::stoi(meta_get(meta, "ae.norm_groups"));
  c.num_fusion_layers = std::stoi(meta_get(meta, "ae.num_fusion_layers"));
  c.num_aff_blocks = std::stoi(meta_get(meta, "ae.num_aff_blocks"));
  c.decoder = parse_decoder_mode(meta_get(meta, "ae.decoder"));
  c.ffl.lambda = std::stod(meta_get(meta, "ae.ffl_lambda"));
  c.ffl.alpha = std::stod(meta_get(meta, "ae.ffl_alpha"));
  c.validate();
  return c;
}

void save_autoencoder(const Autoencoder& ae, data::TensorArchive& archive) {
  write_ae_config(ae.config(), archive.metadata);
  for (const auto& [name, t] : ae.state_dict("ae")) archive.add(name, t);
}

void load_autoencoder_weights(Autoencoder& ae, const data::TensorArchive& archive, bool strict) {
  nn::StateDict state;
  for (const auto& [name, t] : archive.entries())
    if (name.rfind("ae.", 0) == 0) state[name] = t;
  ae.load_state_dict(state, "ae", strict);
}

std::unique_ptr<Autoencoder> load_autoencoder(const data::TensorArchive& archive) {
  Rng rng(0);
  auto ae = std::make_unique<Autoencoder>(read_ae_config(archive.metadata), rng);
  load_autoencoder_weights(*ae, archive, true);
  return ae;
}

}  // namespace ssmoe::autoencoder
