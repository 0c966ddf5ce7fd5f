#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ssmoe/data/archive.hpp"
#include "ssmoe/denoiser/unet.hpp"
#include "ssmoe/diffusion/schedule.hpp"
#include "ssmoe/nn/optim.hpp"

namespace ssmoe::denoiser {

struct DenoiserConfig {
  UNetConfig unet;
  int num_sampling_experts = 4;
  int T = 1000;
};

/// Sampling MoE: one full UNet per timestep stage; a step runs only the
/// expert owning its timestep.
class DenoiserModel : public nn::Module {
 public:
  DenoiserModel(const DenoiserConfig& cfg, Rng& rng);

  /// z_t: [B, C, h, w]; lr: [B, 3, h', w'] with h' | h; t: one per sample.
  /// Samples are grouped by stage so each only touches its own expert.
  Tensor forward(const Tensor& z_t, const Tensor& lr, const std::vector<int>& t, Rng* rng) const;

  int stage_of(int t) const { return diffusion::stage_of(t, partition_); }
  int num_stages() const { return static_cast<int>(experts_.size()); }
  UNet& expert(int i) { return *experts_[static_cast<std::size_t>(i)]; }
  const UNet& expert(int i) const { return *experts_[static_cast<std::size_t>(i)]; }
  const DenoiserConfig& config() const { return cfg_; }

  std::vector<SpaceMoeLayer*> moe_layers() const;
  void momentum_share_all();
  /// Averages every Space-MoE layer for inference.
  void merge_space_experts();
  bool merged() const;

 private:
  DenoiserConfig cfg_;
  diffusion::StagePartition partition_;
  std::vector<std::unique_ptr<UNet>> experts_;
};

struct Stage1Config {
  int steps = 2000;
  int batch_size = 8;
  double lr = 1e-3;
  double beta_start = 1.5e-4;
  double beta_end = 1.95e-2;
  double clip_norm = 1.0;
  int log_interval = 50;
  int checkpoint_interval = 0;
  bool momentum_sharing = true;
  std::uint64_t seed = 0;
};

/// Stage-1 training set: LR images and their target latents, both stacked.
struct LatentDataset {
  Tensor lr;      // [M, 3, h', w']
  Tensor latent;  // [M, C, h, w]
  std::int64_t size() const { return lr.defined() ? lr.dim(0) : 0; }
};

struct TrainRecord {
  int step;
  double loss;  // mean over the interval ending at `step`
};

using nn::TrainingError;

using StepHook = std::function<void(int step, double loss)>;

/// Adam on the eps-prediction loss; momentum sharing after every optimizer
/// step. Returns one record per log interval.
std::vector<TrainRecord> train_stage1(DenoiserModel& model, const LatentDataset& data, const Stage1Config& cfg,
                                      nn::Adam* optimizer = nullptr, const StepHook& hook = {});

/// Reverse chain conditioned on lr, starting from y_T ~ N(0, I).
Tensor sample_latents(const DenoiserModel& model, const diffusion::NoiseSchedule& schedule, const Tensor& lr,
                      const Shape& latent_shape, int steps, Rng& rng);

void save_denoiser(const DenoiserModel& model, data::TensorArchive& archive);
std::unique_ptr<DenoiserModel> load_denoiser(const data::TensorArchive& archive);
void write_denoiser_config(const DenoiserConfig& cfg, bool merged, std::map<std::string, std::string>& meta);
DenoiserConfig read_denoiser_config(const std::map<std::string, std::string>& meta, bool* merged = nullptr);

}  // namespace ssmoe::denoiser
