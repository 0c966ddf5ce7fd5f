#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssmoe/autoencoder/autoencoder.hpp"
#include "ssmoe/denoiser/denoiser.hpp"

namespace ssmoe::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every knob of a run. Keys are "section.name"; see docs/config_format.md.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;

  std::string data_dir = "data";
  std::string work_dir = "runs/desk";

  int train_size = 1000;
  int heldout_size = 100;
  std::int64_t hr_size = 64;
  int scale = 4;

  autoencoder::AeConfig ae;
  autoencoder::AeTrainConfig ae_train;

  denoiser::DenoiserConfig denoiser;
  bool disable_sampling_moe = false;
  bool disable_space_moe = false;
  denoiser::Stage1Config stage1;

  autoencoder::Stage2Config stage2;

  int sample_steps = 200;
  int pair_steps = 50;
  int pair_count = 0;  // 0: one pair per training image
  int pair_batch = 16;

  RunConfig();

  /// Throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// All keys in canonical order and formatting; parsing it back gives an
  /// identical config.
  std::string to_text() const;

  /// Denoiser as trained: channels and latent size derived from the
  /// autoencoder and data settings, ablation switches applied.
  denoiser::DenoiserConfig effective_denoiser() const;
  std::int64_t lr_size() const { return hr_size / scale; }
  std::int64_t latent_size() const { return hr_size / ae.downsample_factor(); }

  /// Cross-field checks (throws ConfigError).
  void validate() const;
};

/// INI-style text: "[section]" headers, "name = value" lines, '#' or ';'
/// comments. Duplicate and unknown keys are errors.
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::string& path);
/// "section.name=value"
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace ssmoe::config
