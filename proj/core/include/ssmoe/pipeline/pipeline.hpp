#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ssmoe/autoencoder/autoencoder.hpp"
#include "ssmoe/config/run_config.hpp"
#include "ssmoe/data/archive.hpp"
#include "ssmoe/denoiser/denoiser.hpp"

namespace ssmoe::pipeline {

/// Raised when a stage's input (dataset, checkpoint) does not exist.
class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Stacked LR/HR images of one split.
struct SrData {
  Tensor lr;  // [M, 3, h', w']
  Tensor hr;  // [M, 3, H, W]
  std::int64_t size() const { return hr.defined() ? hr.dim(0) : 0; }
  SrData slice(std::int64_t start, std::int64_t count) const;
};

std::string train_data_path(const config::RunConfig& cfg);
std::string heldout_data_path(const config::RunConfig& cfg);
std::string ae_path(const config::RunConfig& cfg);
std::string stage1_path(const config::RunConfig& cfg);
std::string pairs_path(const config::RunConfig& cfg);
std::string stage2_path(const config::RunConfig& cfg);

/// Synthetic split from data.* settings; `stream` separates train/held-out seeds.
SrData make_split(const config::RunConfig& cfg, int count, std::uint64_t stream);
data::TensorArchive to_archive(const SrData& d);
SrData split_from_archive(const data::TensorArchive& a);
/// Throws MissingInput when the file is absent.
data::TensorArchive load_archive(const std::string& path, const std::string& what);

/// Runs `fn(i)` for i in [0, n) on up to `threads` threads. Work items must
/// be independent; the result may not depend on the thread count.
void parallel_for(std::int64_t n, int threads, const std::function<void(std::int64_t)>& fn);

/// Autoencoder pretraining always uses the plain decoder; the frequency
/// compensated parts are added and trained in stage 2.
autoencoder::AeConfig pretrain_ae_config(const config::RunConfig& cfg);
std::unique_ptr<autoencoder::Autoencoder> build_autoencoder(const autoencoder::AeConfig& cfg, std::uint64_t seed);

/// Pre-quantization encoder latents of `hr`, computed in batches.
Tensor encode_all(const autoencoder::Autoencoder& ae, const Tensor& hr, std::int64_t batch = 16);
/// 1 / std over all latent entries: the factor that brings latents to unit scale.
double latent_scale_of(const Tensor& latents);

/// Stage-1 checkpoint: denoiser weights, optimizer state and sampling metadata.
struct Stage1Checkpoint {
  std::unique_ptr<denoiser::DenoiserModel> model;
  diffusion::NoiseSchedule schedule;
  double latent_scale = 1.0;
};
void save_stage1(const denoiser::DenoiserModel& model, const nn::Adam* opt, const config::RunConfig& cfg,
                 double latent_scale, data::TensorArchive& archive);
Stage1Checkpoint load_stage1(const data::TensorArchive& archive);

/// Reverse chain per LR batch, returning latents in autoencoder units. The
/// model must be merged. Batch k uses rng seed mix_seed(seed, k).
Tensor sample_latents_batched(const Stage1Checkpoint& ckpt, const Tensor& lr, const Shape& latent_chw, int steps,
                              std::int64_t batch, std::uint64_t seed, int threads);

/// LR -> SR image through the sampler and the decoder.
Tensor super_resolve(const Stage1Checkpoint& ckpt, const autoencoder::Autoencoder& ae, const Tensor& lr, int steps,
                     std::int64_t batch, std::uint64_t seed, int threads);

/// Decoder reconstructions of `hr` from its own quantized latent, conditioned on `lr`.
Tensor reconstruct(const autoencoder::Autoencoder& ae, const Tensor& hr, const Tensor& lr, std::int64_t batch = 16);

}  // namespace ssmoe::pipeline
