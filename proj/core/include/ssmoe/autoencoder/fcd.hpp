#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ssmoe/nn/layers.hpp"
#include "ssmoe/tensor/fft.hpp"

namespace ssmoe::autoencoder {

/// F_m = F_d + C(F_lr, F_d): two 3x3 convs over the concatenated features,
/// the last one zero-initialized so a fresh block is the identity on F_d.
class FusionBlock : public nn::Module {
 public:
  FusionBlock(std::int64_t channels, int groups, Rng& rng);
  Tensor forward(const Tensor& f_lr, const Tensor& f_d) const;

  nn::Conv2d conv1;
  nn::GroupNorm norm;
  nn::Conv2d conv2;
};

/// real(ifft2(mask ⊙ fft2(x))) over the last two axes. The mask is projected
/// onto its Hermitian part first so the result of a real x stays real; it
/// broadcasts against the spectrum as in cmul.
Tensor frequency_filter(const Tensor& x, const ComplexTensor& mask);

/// Adaptive frequency filtering: y = x + post(filter(pre(x))), with the
/// complex mask generated per channel and frequency from log-magnitudes of
/// the pre-projected spectrum. The mask starts at exactly 1 and post starts
/// at zero, so a fresh block is the identity.
class AffBlock : public nn::Module {
 public:
  AffBlock(std::int64_t channels, Rng& rng);
  Tensor forward(const Tensor& x) const;
  /// The complex mask for the spectrum of `h` = pre(x).
  ComplexTensor make_mask(const ComplexTensor& spectrum) const;
  /// Max |imaginary part| left after filtering x with the Hermitian-projected
  /// mask, for realness checks.
  static double imaginary_residue(const Tensor& x, const ComplexTensor& mask);

  nn::Conv2d pre;
  nn::Conv2d gen1;
  nn::Conv2d gen_re;
  nn::Conv2d gen_im;
  nn::Conv2d post;
};

/// Small residual encoder-decoder used as the "unet" refinement in the
/// decoder ablation: one stride-2 level with a skip connection.
class RefineUNet : public nn::Module {
 public:
  RefineUNet(std::int64_t channels, int groups, Rng& rng);
  Tensor forward(const Tensor& x) const;

  nn::Conv2d conv_in;
  nn::Conv2d down;
  nn::GroupNorm norm_mid;
  nn::Conv2d mid;
  nn::Conv2d up;
  nn::GroupNorm norm_out;
  nn::Conv2d conv_out;
};

struct FreqLossConfig {
  double lambda = 10.0;
  double alpha = 1.0;
};

/// (1/MN) Σ w(u,v) |F_r(u,v) − F_f(u,v)|², averaged over batch and channels,
/// with F the orthonormal 2-D DFT (unnormalized DFT / sqrt(MN)).
/// w = |ΔF|^alpha normalized to a maximum of 1 per image and treated as a
/// constant. Inputs: [..., H, W] with power-of-two H, W.
Tensor focal_frequency_loss(const Tensor& real, const Tensor& fake, const FreqLossConfig& cfg = {});

}  // namespace ssmoe::autoencoder
