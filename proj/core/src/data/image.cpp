#include "ssmoe/data/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ssmoe/data/archive.hpp"
#include "ssmoe/tensor/ops.hpp"

namespace ssmoe::data {

double cubic_kernel(double x) {
  const double a = -0.5;
  const double ax = std::abs(x);
  if (ax <= 1.0) return (a + 2.0) * ax * ax * ax - (a + 3.0) * ax * ax + 1.0;
  if (ax < 2.0) return a * ax * ax * ax - 5.0 * a * ax * ax + 8.0 * a * ax - 4.0 * a;
  return 0.0;
}

ResampleAxis bicubic_axis(std::int64_t in_size, std::int64_t out_size, bool antialias) {
  if (in_size <= 0 || out_size <= 0) {
    throw std::invalid_argument("bicubic_resize: extents must be positive (in " + std::to_string(in_size) + ", out " +
                                std::to_string(out_size) + ")");
  }
  const double scale = static_cast<double>(out_size) / static_cast<double>(in_size);
  const bool widen = antialias && scale < 1.0;
  const double kscale = widen ? scale : 1.0;
  const double support = 2.0 / kscale;
  ResampleAxis ax;
  ax.index.resize(static_cast<std::size_t>(out_size));
  ax.weight.resize(static_cast<std::size_t>(out_size));
  for (std::int64_t i = 0; i < out_size; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / scale - 0.5;
    const auto lo = static_cast<std::int64_t>(std::floor(u - support));
    const auto hi = static_cast<std::int64_t>(std::ceil(u + support));
    double total = 0.0;
    auto& idx = ax.index[static_cast<std::size_t>(i)];
    auto& w = ax.weight[static_cast<std::size_t>(i)];
    for (std::int64_t j = lo; j <= hi; ++j) {
      const double k = kscale * cubic_kernel(kscale * (u - static_cast<double>(j)));
      if (k == 0.0) continue;
      idx.push_back(std::clamp<std::int64_t>(j, 0, in_size - 1));
      w.push_back(k);
      total += k;
    }
    for (auto& v : w) v /= total;
  }
  return ax;
}

Tensor bicubic_resize(const Tensor& img, std::int64_t out_h, std::int64_t out_w, bool antialias) {
  if (img.ndim() < 2) throw std::invalid_argument("bicubic_resize: needs at least 2 axes, got " + shape_str(img.shape()));
  const std::int64_t in_h = img.dim(-2), in_w = img.dim(-1);
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("bicubic_resize: zero-size output");
  if (in_h == out_h && in_w == out_w) return img.detach().clone();
  const auto ah = bicubic_axis(in_h, out_h, antialias);
  const auto aw = bicubic_axis(in_w, out_w, antialias);
  const std::int64_t planes = img.numel() / (in_h * in_w);
  Shape os = img.shape();
  os[os.size() - 2] = out_h;
  os[os.size() - 1] = out_w;
  Tensor out = Tensor::empty(os, img.dtype());
  dispatch(img.dtype(), [&]<class T>(T) {
    auto in = img.data<T>();
    auto o = out.mutable_data<T>();
    std::vector<double> tmp(static_cast<std::size_t>(in_h * out_w));
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* src = in.data() + p * in_h * in_w;
      for (std::int64_t r = 0; r < in_h; ++r) {
        for (std::int64_t c = 0; c < out_w; ++c) {
          const auto& idx = aw.index[static_cast<std::size_t>(c)];
          const auto& w = aw.weight[static_cast<std::size_t>(c)];
          double acc = 0.0;
          for (std::size_t k = 0; k < idx.size(); ++k) acc += w[k] * static_cast<double>(src[r * in_w + idx[k]]);
          tmp[static_cast<std::size_t>(r * out_w + c)] = acc;
        }
      }
      T* dst = o.data() + p * out_h * out_w;
      for (std::int64_t r = 0; r < out_h; ++r) {
        const auto& idx = ah.index[static_cast<std::size_t>(r)];
        const auto& w = ah.weight[static_cast<std::size_t>(r)];
        for (std::int64_t c = 0; c < out_w; ++c) {
          double acc = 0.0;
          for (std::size_t k = 0; k < idx.size(); ++k) acc += w[k] * tmp[static_cast<std::size_t>(idx[k] * out_w + c)];
          dst[r * out_w + c] = static_cast<T>(acc);
        }
      }
    }
  });
  return out;
}

Tensor condition_concat(const Tensor& lr, const Tensor& z_t) {
  if (lr.ndim() != z_t.ndim() || lr.ndim() < 3) {
    throw std::invalid_argument("condition_concat: lr " + shape_str(lr.shape()) + " and z_t " + shape_str(z_t.shape()) +
                                " must both be CHW or NCHW");
  }
  const std::int64_t zh = z_t.dim(-2), zw = z_t.dim(-1);
  if (zh % lr.dim(-2) != 0 || zw % lr.dim(-1) != 0) {
    throw std::invalid_argument("condition_concat: lr spatial " + shape_str(lr.shape()) +
                                " does not divide latent " + shape_str(z_t.shape()));
  }
  Tensor up = bicubic_resize(lr, zh, zw, true);
  if (up.dtype() != z_t.dtype()) up = up.to(z_t.dtype());
  return concat({z_t, up}, lr.ndim() - 3);
}

float pixel_to_unit(std::uint8_t p) { return static_cast<float>(2.0 * p / 255.0 - 1.0); }

std::uint8_t unit_to_pixel(double v) {
  const double p = std::round((v + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
}

std::string encode_ppm(const Tensor& img) {
  if (img.ndim() != 3 || img.dim(0) != 3) throw std::invalid_argument("save_ppm: expected 3xHxW, got " + shape_str(img.shape()));
  const std::int64_t h = img.dim(1), w = img.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const auto v = img.to_vector();
  out.reserve(out.size() + static_cast<std::size_t>(3 * h * w));
  for (std::int64_t i = 0; i < h * w; ++i) {
    for (int c = 0; c < 3; ++c) out.push_back(static_cast<char>(unit_to_pixel(v[static_cast<std::size_t>(c * h * w + i)])));
  }
  return out;
}

Tensor decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) t.push_back(bytes[pos++]);
    return t;
  };
  if (token() != "P6") throw std::runtime_error("ppm: not a binary P6 file");
  std::int64_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(token());
    h = std::stoll(token());
    maxval = std::stoll(token());
  } catch (const std::exception&) {
    throw std::runtime_error("ppm: malformed header");
  }
  if (w <= 0 || h <= 0) throw std::runtime_error("ppm: invalid size");
  if (maxval != 255) throw std::runtime_error("ppm: only maxval 255 is supported, got " + std::to_string(maxval));
  ++pos;
  if (bytes.size() < pos + static_cast<std::size_t>(3 * w * h)) throw std::runtime_error("ppm: truncated pixel data");
  std::vector<float> v(static_cast<std::size_t>(3 * w * h));
  for (std::int64_t i = 0; i < h * w; ++i) {
    for (int c = 0; c < 3; ++c) {
      v[static_cast<std::size_t>(c * h * w + i)] =
          pixel_to_unit(static_cast<std::uint8_t>(bytes[pos + static_cast<std::size_t>(3 * i + c)]));
    }
  }
  return Tensor::from_vector({3, h, w}, std::move(v));
}

Tensor load_ppm(const std::string& path) { return decode_ppm(read_file(path)); }

void save_ppm(const std::string& path, const Tensor& img) {
  const std::string bytes = encode_ppm(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("ppm: cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace ssmoe::data
