#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssmoe/denoiser/denoiser.hpp"

namespace ssmoe::metrics {

/// How Space-MoE layers are costed: `routed` is the training form (every
/// expert held, each token group padded to ceil(L/N) rows), `merged` the
/// inference form with the averaged single FFN.
enum class MoeMode { routed, merged };

std::string to_string(MoeMode m);

struct CostEntry {
  std::string name;
  std::string kind;  // conv, linear, norm, attention, ffn
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

/// FLOPs are multiply-accumulates. Convs count k²·Cin·Cout per output pixel,
/// linears in·out per row, attention the QKᵀ and AV products, normalizations
/// one per element; biases, activations and softmax are free.
struct CostReport {
  std::uint64_t param_count = 0;     // all stage experts
  std::uint64_t flops_per_step = 0;  // one stage expert, one network evaluation
  int sampling_steps = 0;
  std::uint64_t total_flops = 0;     // flops_per_step * sampling_steps
  int num_stages = 1;
  MoeMode mode = MoeMode::merged;
  std::vector<CostEntry> layers;     // one stage expert
};

/// Analytic cost of the denoiser on latents [B, C, h, w]; throws when the
/// shape does not fit the configuration.
CostReport count_cost(const denoiser::DenoiserConfig& cfg, const std::vector<std::int64_t>& latent_shape,
                      MoeMode mode, int sampling_steps);

/// The same architecture with one stage and one FFN per Space-MoE layer.
denoiser::DenoiserConfig single_ffn_baseline(const denoiser::DenoiserConfig& cfg);

}  // namespace ssmoe::metrics
