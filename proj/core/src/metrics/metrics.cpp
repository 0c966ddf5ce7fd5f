#include "ssmoe/metrics/metrics.hpp"

#include <cmath>
#include <complex>
#include <stdexcept>

#include "ssmoe/tensor/fft.hpp"

namespace ssmoe::metrics {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()) + " differ");
  }
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = i - (size - 1) / 2.0;
    g[static_cast<std::size_t>(i)] = std::exp(-x * x / (2 * sigma * sigma));
    s += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= s;
  return g;
}

}  // namespace

Tensor luminance(const Tensor& img) {
  const bool batched = img.ndim() == 4;
  if (!(img.ndim() == 3 || batched) || img.dim(batched ? 1 : 0) != 3) {
    throw std::invalid_argument("luminance: expected [3, H, W] or [B, 3, H, W], got " + shape_str(img.shape()));
  }
  const std::int64_t b = batched ? img.dim(0) : 1, h = img.dim(-2), w = img.dim(-1), plane = h * w;
  const auto v = img.to_vector();
  std::vector<double> y(static_cast<std::size_t>(b * plane));
  for (std::int64_t n = 0; n < b; ++n) {
    const double* r = v.data() + n * 3 * plane;
    for (std::int64_t k = 0; k < plane; ++k) {
      const double rr = (r[k] + 1) / 2, gg = (r[plane + k] + 1) / 2, bb = (r[2 * plane + k] + 1) / 2;
      y[static_cast<std::size_t>(n * plane + k)] = 0.299 * rr + 0.587 * gg + 0.114 * bb;
    }
  }
  return Tensor::from_values(batched ? Shape{b, h, w} : Shape{h, w}, y, DType::f64);
}

double psnr_y(const Tensor& a, const Tensor& b) {
  require_same(a, b, "psnr_y");
  const auto ya = luminance(a).to_vector(), yb = luminance(b).to_vector();
  double se = 0.0;
  for (std::size_t i = 0; i < ya.size(); ++i) se += (ya[i] - yb[i]) * (ya[i] - yb[i]);
  const double mse = se / static_cast<double>(ya.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor& a, const Tensor& b) {
  require_same(a, b, "ssim");
  constexpr int kWin = 11;
  const Tensor la = luminance(a), lb = luminance(b);
  const std::int64_t h = la.dim(-2), w = la.dim(-1), planes = la.numel() / (h * w);
  if (h < kWin || w < kWin) throw std::invalid_argument("ssim: images must be at least 11x11");
  const auto g = gaussian_window(kWin, 1.5);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto x = la.to_vector(), y = lb.to_vector();
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t p = 0; p < planes; ++p) {
    const double* px = x.data() + p * h * w;
    const double* py = y.data() + p * h * w;
    for (std::int64_t i = 0; i + kWin <= h; ++i) {
      for (std::int64_t j = 0; j + kWin <= w; ++j) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int di = 0; di < kWin; ++di) {
          for (int dj = 0; dj < kWin; ++dj) {
            const double wt = g[static_cast<std::size_t>(di)] * g[static_cast<std::size_t>(dj)];
            const double u = px[(i + di) * w + j + dj], v = py[(i + di) * w + j + dj];
            mx += wt * u;
            my += wt * v;
            sxx += wt * u * u;
            syy += wt * v * v;
            sxy += wt * u * v;
          }
        }
        const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
        total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

double log_spectral_distance(const Tensor& a, const Tensor& b, double eps) {
  require_same(a, b, "log_spectral_distance");
  if (a.ndim() < 2) throw std::invalid_argument("log_spectral_distance: need at least 2 dims");
  const std::int64_t h = a.dim(-2), w = a.dim(-1), plane = h * w;
  if (!is_power_of_two(h) || !is_power_of_two(w)) {
    throw std::invalid_argument("log_spectral_distance: extents must be powers of two, got " + shape_str(a.shape()));
  }
  const auto x = a.to_vector(), y = b.to_vector();
  std::vector<std::complex<double>> fa(static_cast<std::size_t>(plane)), fb(static_cast<std::size_t>(plane));
  double acc = 0.0;
  for (std::size_t start = 0; start < x.size(); start += static_cast<std::size_t>(plane)) {
    for (std::int64_t k = 0; k < plane; ++k) {
      fa[static_cast<std::size_t>(k)] = x[start + static_cast<std::size_t>(k)];
      fb[static_cast<std::size_t>(k)] = y[start + static_cast<std::size_t>(k)];
    }
    fft2_inplace<double>(fa, h, w, false);
    fft2_inplace<double>(fb, h, w, false);
    for (std::int64_t k = 0; k < plane; ++k) {
      const double d = 10.0 * (std::log10(std::norm(fa[static_cast<std::size_t>(k)]) + eps) -
                               std::log10(std::norm(fb[static_cast<std::size_t>(k)]) + eps));
      acc += d * d;
    }
  }
  return std::sqrt(acc / static_cast<double>(x.size()));
}

MetricRow evaluate_pair(const std::string& name, const Tensor& pred, const Tensor& ref) {
  return {name, psnr_y(pred, ref), ssim(pred, ref), log_spectral_distance(pred, ref)};
}

MetricReport summarize(std::vector<MetricRow> rows) {
  MetricReport r;
  r.mean.name = "mean";
  for (const auto& row : rows) {
    r.mean.psnr_y += row.psnr_y;
    r.mean.ssim += row.ssim;
    r.mean.lsd += row.lsd;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    r.mean.psnr_y /= n;
    r.mean.ssim /= n;
    r.mean.lsd /= n;
  }
  r.rows = std::move(rows);
  return r;
}

}  // namespace ssmoe::metrics
