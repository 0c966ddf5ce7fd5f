#include "ssmoe/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>

#include "ssmoe/data/image.hpp"
#include "ssmoe/tensor/fft.hpp"
#include "ssmoe/tensor/ops.hpp"

namespace ssmoe::data {

namespace {

struct Polygon {
  std::vector<double> xs, ys;
  double color[3];
};

bool inside(const Polygon& p, double x, double y) {
  bool in = false;
  const std::size_t n = p.xs.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    if ((p.ys[i] > y) != (p.ys[j] > y) &&
        x < (p.xs[j] - p.xs[i]) * (y - p.ys[i]) / (p.ys[j] - p.ys[i]) + p.xs[i]) {
      in = !in;
    }
  }
  return in;
}

}  // namespace

Tensor synthesize_image(std::int64_t size, std::uint64_t seed) {
  if (size <= 0) throw std::invalid_argument("synthesize_image: size must be positive");
  Rng rng(seed);
  const auto plane = static_cast<std::size_t>(size * size);
  std::vector<double> img(3 * plane);
  double base[3];
  for (double& b : base) b = rng.uniform(-0.5, 0.5);

  struct Wave {
    double fx, fy, phase, amp, mix[3];
  };
  std::vector<Wave> waves(static_cast<std::size_t>(2 + rng.randint(0, 3)));
  for (auto& w : waves) {
    const double f = rng.uniform(0.04, 0.45);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    w.fx = f * std::cos(theta);
    w.fy = f * std::sin(theta);
    w.phase = rng.uniform(0.0, 2 * std::numbers::pi);
    w.amp = rng.uniform(0.08, 0.3);
    for (double& m : w.mix) m = rng.uniform(-1.0, 1.0);
  }

  std::vector<Polygon> polys(static_cast<std::size_t>(1 + rng.randint(0, 3)));
  for (auto& p : polys) {
    const int nv = static_cast<int>(rng.randint(3, 6));
    const double cx = rng.uniform(0.0, static_cast<double>(size));
    const double cy = rng.uniform(0.0, static_cast<double>(size));
    const double radius = rng.uniform(0.12, 0.4) * static_cast<double>(size);
    std::vector<double> angles(static_cast<std::size_t>(nv));
    for (auto& a : angles) a = rng.uniform(0.0, 2 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    for (double a : angles) {
      const double r = radius * rng.uniform(0.6, 1.0);
      p.xs.push_back(cx + r * std::cos(a));
      p.ys.push_back(cy + r * std::sin(a));
    }
    for (double& c : p.color) c = rng.uniform(-0.9, 0.9);
  }
  const double noise_sigma = rng.uniform(0.03, 0.12);

  for (std::int64_t y = 0; y < size; ++y) {
    for (std::int64_t x = 0; x < size; ++x) {
      const auto i = static_cast<std::size_t>(y * size + x);
      double v[3] = {base[0], base[1], base[2]};
      for (const auto& w : waves) {
        const double s = w.amp * std::sin(2 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
        for (int c = 0; c < 3; ++c) v[c] += s * w.mix[c];
      }
      for (const auto& p : polys) {
        if (inside(p, x + 0.5, y + 0.5)) {
          for (int c = 0; c < 3; ++c) v[c] = 0.25 * v[c] + 0.75 * p.color[c];
        }
      }
      const double n = noise_sigma * rng.normal();
      for (int c = 0; c < 3; ++c) img[c * plane + i] = std::clamp(v[c] + n, -1.0, 1.0);
    }
  }
  std::vector<float> f(img.begin(), img.end());
  return Tensor::from_vector({3, size, size}, std::move(f));
}

std::vector<ImagePair> make_synthetic_dataset(int n, std::int64_t hr_size, int scale, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("make_synthetic_dataset: negative count");
  if (scale < 1 || hr_size % scale != 0) {
    throw std::invalid_argument("make_synthetic_dataset: hr size " + std::to_string(hr_size) +
                                " not divisible by scale " + std::to_string(scale));
  }
  std::vector<ImagePair> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ImagePair p;
    p.hr = synthesize_image(hr_size, mix_seed(seed, static_cast<std::uint64_t>(i)));
    p.lr = bicubic_resize(p.hr, hr_size / scale, hr_size / scale, true);
    p.scale = scale;
    out.push_back(std::move(p));
  }
  return out;
}

double high_frequency_energy_fraction(const std::vector<Tensor>& images) {
  double hf = 0.0, total = 0.0;
  for (const auto& img : images) {
    const std::int64_t h = img.dim(-2), w = img.dim(-1);
    const std::int64_t planes = img.numel() / (h * w);
    const auto v = img.to_vector();
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(h * w));
    for (std::int64_t p = 0; p < planes; ++p) {
      for (std::int64_t i = 0; i < h * w; ++i) buf[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(p * h * w + i)];
      fft2_inplace<double>(buf, h, w, false);
      for (std::int64_t u = 0; u < h; ++u) {
        for (std::int64_t k = 0; k < w; ++k) {
          if (u == 0 && k == 0) continue;
          const double fu = static_cast<double>(u <= h / 2 ? u : u - h) / static_cast<double>(h);
          const double fv = static_cast<double>(k <= w / 2 ? k : k - w) / static_cast<double>(w);
          const double e = std::norm(buf[static_cast<std::size_t>(u * w + k)]);
          total += e;
          if (std::sqrt(fu * fu + fv * fv) > 0.25) hf += e;
        }
      }
    }
  }
  return total > 0.0 ? hf / total : 0.0;
}

Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) throw std::invalid_argument("stack: empty list");
  std::vector<Tensor> parts;
  parts.reserve(items.size());
  for (const auto& t : items) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    parts.push_back(alias_with_shape(t.detach(), s));
  }
  return concat(parts, 0);
}

Tensor unstack_at(const Tensor& batch, std::int64_t i) {
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  return alias_with_shape(narrow(batch.detach(), 0, i, 1), s).clone();
}

}  // namespace ssmoe::data
