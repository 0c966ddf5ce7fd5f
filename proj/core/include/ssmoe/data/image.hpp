#pragma once

#include <string>
#include <vector>

#include "ssmoe/tensor/tensor.hpp"

namespace ssmoe::data {

/// Cubic convolution kernel with a = -0.5.
double cubic_kernel(double x);

/// Resampling weights for one axis: out[i] = sum_k w[i][k] * in[idx[i][k]].
struct ResampleAxis {
  std::vector<std::vector<std::int64_t>> index;
  std::vector<std::vector<double>> weight;
};

/// imresize-style bicubic weights: pixel centers aligned, kernel widened by
/// 1/scale when downscaling with antialias, weights normalized, source
/// indices clamped to the border.
ResampleAxis bicubic_axis(std::int64_t in_size, std::int64_t out_size, bool antialias);

/// Resizes the last two axes of `img` (any leading shape). Not differentiable.
Tensor bicubic_resize(const Tensor& img, std::int64_t out_h, std::int64_t out_w, bool antialias = true);

/// Bicubic upsample of `lr` to the spatial size of `z_t`, concatenated after
/// z_t on the channel axis. Both are NCHW (or CHW).
Tensor condition_concat(const Tensor& lr, const Tensor& z_t);

/// [0,255] -> [-1,1] and back (rounded, clamped).
float pixel_to_unit(std::uint8_t p);
std::uint8_t unit_to_pixel(double v);

/// Binary PPM (P6, maxval 255) as a 3xHxW f32 tensor in [-1, 1].
Tensor load_ppm(const std::string& path);
void save_ppm(const std::string& path, const Tensor& img);
std::string encode_ppm(const Tensor& img);
Tensor decode_ppm(const std::string& bytes);

}  // namespace ssmoe::data
