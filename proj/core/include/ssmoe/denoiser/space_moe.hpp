#pragma once

#include <memory>
#include <vector>

#include "ssmoe/nn/layers.hpp"

namespace ssmoe::denoiser {

enum class FfnActivation { gelu, identity };

/// Two linear layers with an activation in between: d -> hidden -> d.
class Ffn : public nn::Module {
 public:
  Ffn(std::int64_t d, std::int64_t hidden, Rng& rng, FfnActivation act = FfnActivation::gelu);
  Tensor forward(const Tensor& x) const;

  nn::Linear fc1, fc2;

 private:
  FfnActivation act_;
};

/// Token FFN with N experts. Training mode routes a random equal share of
/// each sample's tokens to every expert; merged mode holds one FFN whose
/// weights are the expert mean. Output is x + FFN(layer_norm(x)).
class SpaceMoeLayer : public nn::Module {
 public:
  SpaceMoeLayer(std::int64_t d, std::int64_t hidden, int num_experts, double gamma, Rng& rng,
                FfnActivation act = FfnActivation::gelu);

  /// tokens: [B, L, d]. Training mode needs `rng` for the split.
  Tensor forward(const Tensor& tokens, Rng* rng) const;
  /// Training-mode forward with an explicit token-to-expert assignment per
  /// sample: assignment[b][l] is the expert for token l of sample b.
  Tensor forward_assigned(const Tensor& tokens, const std::vector<std::vector<int>>& assignment) const;
  /// The random split used by forward(): group i gets tokens
  /// perm[i*G, (i+1)*G) with G = ceil(L/N); slots past L are zero padding.
  static std::vector<std::vector<int>> random_assignment(std::int64_t batch, std::int64_t length, int num_experts,
                                                         Rng& rng);

  /// W_i <- gamma*W_i + (1-gamma)*mean_{j != i} W_j, all from pre-update weights.
  void momentum_share();
  /// Replaces the experts by their arithmetic mean. No-op when merged.
  void merge();

  bool merged() const { return merged_; }
  int num_experts() const { return static_cast<int>(experts_.size()); }
  const Ffn& expert(int i) const { return *experts_[static_cast<std::size_t>(i)]; }
  Ffn& expert(int i) { return *experts_[static_cast<std::size_t>(i)]; }
  const nn::LayerNorm& norm() const { return norm_; }
  double gamma() const { return gamma_; }
  void set_gamma(double g) { gamma_ = g; }
  std::int64_t dim() const { return d_; }
  std::int64_t hidden() const { return hidden_; }

 private:
  std::int64_t d_, hidden_;
  double gamma_;
  bool merged_ = false;
  nn::LayerNorm norm_;
  std::vector<std::unique_ptr<Ffn>> experts_;
};

}  // namespace ssmoe::denoiser
