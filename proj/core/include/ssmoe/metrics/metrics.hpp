#pragma once

#include <string>
#include <vector>

#include "ssmoe/tensor/tensor.hpp"

namespace ssmoe::metrics {

inline constexpr double kPsnrCap = 100.0;

/// BT.601 luminance of [3, H, W] or [B, 3, H, W] images in [-1, 1], mapped
/// to [0, 1]; returns [H, W] or [B, H, W] as f64.
Tensor luminance(const Tensor& img);

/// 10·log10(1 / MSE_Y) over the whole tensor, capped at 100 dB.
double psnr_y(const Tensor& a, const Tensor& b);

/// Mean SSIM on the luminance channel: 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, data range 1, valid windows only.
double ssim(const Tensor& a, const Tensor& b);

/// Log-spectral distance in dB over every channel plane:
/// sqrt(mean over bins of (10·log10(|F_a|²+eps) − 10·log10(|F_b|²+eps))²).
/// Planes must have power-of-two extents.
double log_spectral_distance(const Tensor& a, const Tensor& b, double eps = 1e-8);

struct MetricRow {
  std::string name;
  double psnr_y = 0.0;
  double ssim = 0.0;
  double lsd = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricRow mean;  // name "mean"
};

/// Single image pair [3, H, W].
MetricRow evaluate_pair(const std::string& name, const Tensor& pred, const Tensor& ref);
/// Aggregates rows into a report with the arithmetic mean of each column.
MetricReport summarize(std::vector<MetricRow> rows);

}  // namespace ssmoe::metrics
