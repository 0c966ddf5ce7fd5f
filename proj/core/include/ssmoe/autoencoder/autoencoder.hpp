#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ssmoe/autoencoder/fcd.hpp"
#include "ssmoe/autoencoder/vq.hpp"
#include "ssmoe/data/archive.hpp"
#include "ssmoe/nn/optim.hpp"

namespace ssmoe::autoencoder {

/// Decoder ablation settings. Every mode except baseline fuses LR features;
/// the refinement after the last upsample block is AFF, a small UNet, or
/// nothing; modes ending in ffl add the frequency loss in stage 2.
enum class DecoderMode { baseline, aff, ffl, unet_ffl, aff_ffl };

DecoderMode parse_decoder_mode(const std::string& s);
std::string to_string(DecoderMode m);

struct AeConfig {
  std::int64_t in_channels = 3;
  std::int64_t channels = 16;
  std::vector<int> channel_mult{1, 2, 4};
  int num_res_blocks = 1;
  std::int64_t z_channels = 3;
  std::int64_t embed_dim = 4;
  std::int64_t n_embed = 256;
  double dropout = 0.0;
  int norm_groups = 8;
  /// Decoder levels (highest resolution first) that get a fusion block.
  int num_fusion_layers = 1;
  int num_aff_blocks = 1;
  DecoderMode decoder = DecoderMode::aff_ffl;
  FreqLossConfig ffl;

  int downsample_factor() const { return 1 << (static_cast<int>(channel_mult.size()) - 1); }
  bool uses_fusion() const { return decoder != DecoderMode::baseline && num_fusion_layers > 0; }
  bool uses_aff() const { return decoder == DecoderMode::aff || decoder == DecoderMode::aff_ffl; }
  bool uses_refine_unet() const { return decoder == DecoderMode::unet_ffl; }
  bool uses_ffl() const {
    return decoder == DecoderMode::ffl || decoder == DecoderMode::unet_ffl || decoder == DecoderMode::aff_ffl;
  }
  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

class ResnetBlock : public nn::Module {
 public:
  ResnetBlock(std::int64_t in, std::int64_t out, int groups, double dropout, Rng& rng);
  /// Dropout is applied only when `rng` is given.
  Tensor forward(const Tensor& x, Rng* rng) const;

  nn::GroupNorm norm1;
  nn::Conv2d conv1;
  nn::GroupNorm norm2;
  nn::Conv2d conv2;
  std::unique_ptr<nn::Conv2d> skip;

 private:
  double dropout_;
};

class Encoder : public nn::Module {
 public:
  Encoder(const AeConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x, Rng* rng) const;

 private:
  nn::Conv2d conv_in_;
  std::vector<std::vector<std::unique_ptr<ResnetBlock>>> blocks_;
  std::vector<std::unique_ptr<nn::Conv2d>> down_;
  std::unique_ptr<ResnetBlock> mid1_, mid2_;
  nn::GroupNorm norm_out_;
  nn::Conv2d conv_out_;
};

/// Truncated encoder over the bicubic-upsampled LR image: the first `levels`
/// encoder levels without the middle blocks. Returns one feature map per
/// level, shaped like the decoder features at that level.
class LrExtractor : public nn::Module {
 public:
  LrExtractor(const AeConfig& cfg, int levels, Rng& rng);
  std::vector<Tensor> forward(const Tensor& lr_up, Rng* rng) const;

 private:
  nn::Conv2d conv_in_;
  std::vector<std::vector<std::unique_ptr<ResnetBlock>>> blocks_;
  std::vector<std::unique_ptr<nn::Conv2d>> down_;
};

class Decoder : public nn::Module {
 public:
  Decoder(const AeConfig& cfg, Rng& rng);
  /// `lr_features[i]` feeds the fusion block of level i; must hold one entry
  /// per fusion level (empty when fusion is off).
  Tensor forward(const Tensor& h, const std::vector<Tensor>& lr_features, Rng* rng) const;

  int num_fusion_levels() const { return static_cast<int>(fusion_.size()); }
  FusionBlock& fusion(int level) { return *fusion_[static_cast<std::size_t>(level)]; }
  std::vector<AffBlock*> aff_blocks() const;

 private:
  nn::Conv2d conv_in_;
  std::unique_ptr<ResnetBlock> mid1_, mid2_;
  // indexed by level, 0 = highest resolution
  std::vector<std::vector<std::unique_ptr<ResnetBlock>>> blocks_;
  std::vector<std::unique_ptr<nn::Conv2d>> up_;
  std::vector<std::unique_ptr<FusionBlock>> fusion_;
  std::vector<std::unique_ptr<AffBlock>> aff_;
  std::unique_ptr<RefineUNet> refine_unet_;
  nn::GroupNorm norm_out_;
  nn::Conv2d conv_out_;
};

/// VQ autoencoder with the frequency-compensated decoder.
class Autoencoder : public nn::Module {
 public:
  Autoencoder(const AeConfig& cfg, Rng& rng);

  /// img [B, 3, H, W] -> z [B, z_channels, H/f, W/f] (pre-quantization).
  Tensor encode(const Tensor& img, Rng* rng = nullptr) const;
  /// quant_conv then nearest-code lookup.
  VqResult quantize(const Tensor& z) const;
  /// z_q [B, embed_dim, h, w] -> image [B, 3, h*f, w*f]. `lr` is required
  /// when the decoder fuses LR features and ignored otherwise.
  Tensor decode(const Tensor& z_q, const Tensor& lr, Rng* rng = nullptr) const;
  /// decode(quantize(z).z_q, lr)
  Tensor decode_latent(const Tensor& z, const Tensor& lr, Rng* rng = nullptr) const;

  /// Parameters of the decoding path (everything after the codebook), the
  /// set trained in stage 2.
  std::vector<std::pair<std::string, Tensor*>> decoding_parameters() const;

  const AeConfig& config() const { return cfg_; }
  Encoder& encoder() { return encoder_; }
  VectorQuantizer& quantizer() { return quantizer_; }
  Decoder& decoder() { return decoder_; }
  LrExtractor* lr_extractor() const { return lr_extractor_.get(); }

 private:
  AeConfig cfg_;
  Encoder encoder_;
  nn::Conv2d quant_conv_;
  VectorQuantizer quantizer_;
  nn::Conv2d post_quant_conv_;
  Decoder decoder_;
  std::unique_ptr<LrExtractor> lr_extractor_;
};

struct LossParts {
  Tensor total;
  double l1 = 0.0;
  double vq = 0.0;
  double freq = 0.0;
};

/// L1 + codebook + beta * commitment, plus lambda * focal frequency loss when
/// the decoder mode trains with it.
LossParts reconstruction_loss(const AeConfig& cfg, const Tensor& target, const Tensor& recon, const VqResult& vq,
                              double commitment_beta, bool with_freq);

struct LossRecord {
  int step;
  double total, l1, vq, freq;  // means over the interval ending at `step`
};

using LossHook = std::function<void(int step, const LossParts& parts)>;

struct AeTrainConfig {
  int steps = 2000;
  int batch_size = 4;
  double lr = 2e-4;
  double commitment_beta = 0.25;
  double clip_norm = 1.0;
  int log_interval = 50;
  /// Every this many steps, codebook entries unused since the last restart
  /// are moved onto random encoder outputs of the current batch; 0 disables.
  int dead_code_restart = 100;
  std::uint64_t seed = 0;
};

/// Trains encoder, codebook and decoder on HR images [M, 3, H, W]; the LR
/// input is the antialiased bicubic downscale by `lr_scale`.
std::vector<LossRecord> train_ae(Autoencoder& ae, const Tensor& hr, int lr_scale, const AeTrainConfig& cfg,
                                 const LossHook& hook = {});

/// Stage-2 data: LR images, the latents sampled for them, and the HR targets.
struct PairDataset {
  Tensor lr;      // [M, 3, h', w']
  Tensor latent;  // [M, z_channels, h, w]
  Tensor hr;      // [M, 3, H, W]
  std::int64_t size() const { return lr.defined() ? lr.dim(0) : 0; }
};

struct Stage2Config {
  int steps = 2000;
  int batch_size = 4;
  double lr = 1e-4;
  double commitment_beta = 0.25;
  double clip_norm = 1.0;
  int log_interval = 50;
  std::uint64_t seed = 0;
};

/// Encoder and codebook frozen; trains the decoding path on
/// L1 + codebook terms (constant here) + lambda * L_freq.
std::vector<LossRecord> train_stage2(Autoencoder& ae, const PairDataset& data, const Stage2Config& cfg,
                                     const LossHook& hook = {});

void write_ae_config(const AeConfig& cfg, std::map<std::string, std::string>& meta);
AeConfig read_ae_config(const std::map<std::string, std::string>& meta);
void save_autoencoder(const Autoencoder& ae, data::TensorArchive& archive);
std::unique_ptr<Autoencoder> load_autoencoder(const data::TensorArchive& archive);
/// Copies the archive's "ae." weights into `ae`. With strict=false, layers
/// the archive lacks (e.g. fusion blocks of a different decoder mode) keep
/// their initialization.
void load_autoencoder_weights(Autoencoder& ae, const data::TensorArchive& archive, bool strict);

}  // namespace ssmoe::autoencoder
