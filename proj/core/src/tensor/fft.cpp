#include "ssmoe/tensor/fft.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <vector>

#include "iteration.hpp"
#include "ssmoe/tensor/ops.hpp"

namespace ssmoe {

bool is_power_of_two(std::int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

namespace {

template <class T>
void fft1d(std::complex<T>* a, std::int64_t n, bool inverse, const std::vector<std::complex<T>>& twiddle) {
  for (std::int64_t i = 1, j = 0; i < n; ++i) {
    std::int64_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const T sign = inverse ? T(-1) : T(1);
  for (std::int64_t len = 2; len <= n; len <<= 1) {
    const std::int64_t half = len / 2;
    const std::int64_t step = n / len;
    for (std::int64_t i = 0; i < n; i += len) {
      for (std::int64_t k = 0; k < half; ++k) {
        // Written out: std::complex operator* goes through the slow Annex G path.
        const T wr = twiddle[static_cast<std::size_t>(k * step)].real();
        const T wi = sign * twiddle[static_cast<std::size_t>(k * step)].imag();
        const T br = a[i + k + half].real(), bi = a[i + k + half].imag();
        const T vr = br * wr - bi * wi, vi = br * wi + bi * wr;
        const T ur = a[i + k].real(), ui = a[i + k].imag();
        a[i + k] = {ur + vr, ui + vi};
        a[i + k + half] = {ur - vr, ui - vi};
      }
    }
  }
}

template <class T>
std::vector<std::complex<T>> make_twiddles(std::int64_t n) {
  std::vector<std::complex<T>> tw(static_cast<std::size_t>(std::max<std::int64_t>(n / 2, 1)));
  for (std::int64_t k = 0; k < n / 2; ++k) {
    const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    tw[static_cast<std::size_t>(k)] = {static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang))};
  }
  return tw;
}

// Per-thread cache indexed by log2(n).
template <class T>
const std::vector<std::complex<T>>& twiddles(std::int64_t n) {
  thread_local std::vector<std::vector<std::complex<T>>> cache(64);
  const int lg = std::countr_zero(static_cast<std::uint64_t>(n));
  auto& tw = cache[static_cast<std::size_t>(lg)];
  if (tw.empty()) tw = make_twiddles<T>(n);
  return tw;
}

void require_fft_extents(const Shape& s, const char* op) {
  if (s.size() < 2) throw TensorError(std::string(op) + ": needs at least 2 axes, got " + shape_str(s));
  const auto h = s[s.size() - 2], w = s[s.size() - 1];
  if (!is_power_of_two(h) || !is_power_of_two(w)) {
    throw TensorError(std::string(op) + ": extents " + std::to_string(h) + "x" + std::to_string(w) +
                      " are not powers of two (radix-2 only)");
  }
}

// Packed layout: leading axis of size 2 holds (re, im) planes.
Tensor fft2_packed(const Tensor& packed, bool inverse);

Tensor fft2_packed(const Tensor& packed, bool inverse) {
  const Shape& s = packed.shape();
  require_fft_extents(s, inverse ? "ifft2" : "fft2");
  const std::int64_t h = s[s.size() - 2], w = s[s.size() - 1];
  const std::int64_t plane = h * w;
  const std::int64_t batch = packed.numel() / (2 * plane);
  Tensor out = Tensor::empty(s, packed.dtype());
  dispatch(packed.dtype(), [&]<class T>(T) {
    auto in = packed.data<T>();
    auto o = out.mutable_data<T>();
    const std::int64_t half = batch * plane;
    std::vector<std::complex<T>> buf(static_cast<std::size_t>(plane));
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t i = 0; i < plane; ++i) {
        buf[static_cast<std::size_t>(i)] = {in[b * plane + i], in[half + b * plane + i]};
      }
      fft2_inplace<T>(buf, h, w, inverse);
      for (std::int64_t i = 0; i < plane; ++i) {
        o[b * plane + i] = buf[static_cast<std::size_t>(i)].real();
        o[half + b * plane + i] = buf[static_cast<std::size_t>(i)].imag();
      }
    }
  });
  const double hw = static_cast<double>(plane);
  // Forward Y = F x has adjoint conj(F) = HW·F⁻¹; the inverse has adjoint F/HW.
  return make_op_result(out, inverse ? "ifft2" : "fft2", {packed}, [inverse, hw](const Tensor& g) -> std::vector<Tensor> {
    if (inverse) return {mul_scalar(fft2_packed(g, false), 1.0 / hw)};
    return {mul_scalar(fft2_packed(g, true), hw)};
  });
}

Tensor pack(const ComplexTensor& z) {
  if (z.re.shape() != z.im.shape()) {
    throw TensorError("complex: re " + shape_str(z.re.shape()) + " and im " + shape_str(z.im.shape()) + " differ");
  }
  Shape s = z.re.shape();
  s.insert(s.begin(), 1);
  return concat({reshape(z.re, s), reshape(z.im, s)}, 0);
}

ComplexTensor unpack(const Tensor& p) {
  Shape s(p.shape().begin() + 1, p.shape().end());
  return {reshape(narrow(p, 0, 0, 1), s), reshape(narrow(p, 0, 1, 1), s)};
}

}  // namespace

template <class T>
void fft2_inplace(std::span<std::complex<T>> data, std::int64_t h, std::int64_t w, bool inverse) {
  if (!is_power_of_two(h) || !is_power_of_two(w)) {
    throw TensorError("fft2: extents " + std::to_string(h) + "x" + std::to_string(w) +
                      " are not powers of two (radix-2 only)");
  }
  if (static_cast<std::int64_t>(data.size()) != h * w) throw TensorError("fft2: buffer size mismatch");
  const auto& tw_w = twiddles<T>(w);
  const auto& tw_h = twiddles<T>(h);
  for (std::int64_t r = 0; r < h; ++r) fft1d(data.data() + r * w, w, inverse, tw_w);
  std::vector<std::complex<T>> col(static_cast<std::size_t>(h));
  for (std::int64_t c = 0; c < w; ++c) {
    for (std::int64_t r = 0; r < h; ++r) col[static_cast<std::size_t>(r)] = data[static_cast<std::size_t>(r * w + c)];
    fft1d(col.data(), h, inverse, tw_h);
    for (std::int64_t r = 0; r < h; ++r) data[static_cast<std::size_t>(r * w + c)] = col[static_cast<std::size_t>(r)];
  }
  if (inverse) {
    const T scale = static_cast<T>(1.0 / static_cast<double>(h * w));
    for (auto& v : data) v *= scale;
  }
}

template void fft2_inplace<float>(std::span<std::complex<float>>, std::int64_t, std::int64_t, bool);
template void fft2_inplace<double>(std::span<std::complex<double>>, std::int64_t, std::int64_t, bool);

ComplexTensor fft2(const Tensor& x) {
  detail::require_defined(x, "fft2");
  require_fft_extents(x.shape(), "fft2");
  return fft2(ComplexTensor{x, Tensor::zeros(x.shape(), x.dtype())});
}

ComplexTensor fft2(const ComplexTensor& x) { return unpack(fft2_packed(pack(x), false)); }

ComplexTensor ifft2(const ComplexTensor& x) { return unpack(fft2_packed(pack(x), true)); }

ComplexTensor cadd(const ComplexTensor& a, const ComplexTensor& b) { return {add(a.re, b.re), add(a.im, b.im)}; }

ComplexTensor cmul(const ComplexTensor& a, const ComplexTensor& b) {
  return {sub(mul(a.re, b.re), mul(a.im, b.im)), add(mul(a.re, b.im), mul(a.im, b.re))};
}

Tensor cabs2(const ComplexTensor& z) { return add(square(z.re), square(z.im)); }

Tensor cabs(const ComplexTensor& z, double eps) {
  Tensor p = cabs2(z);
  if (eps != 0.0) p = add_scalar(p, eps);
  return sqrt(p);
}

Tensor freq_reflect(const Tensor& x) {
  detail::require_defined(x, "freq_reflect");
  if (x.ndim() < 2) throw TensorError("freq_reflect: needs at least 2 axes, got " + shape_str(x.shape()));
  const std::int64_t h = x.dim(-2), w = x.dim(-1), plane = h * w;
  const std::int64_t batch = x.numel() / plane;
  Tensor out = Tensor::empty(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t u = 0; u < h; ++u) {
        const std::int64_t ru = (h - u) % h;
        for (std::int64_t v = 0; v < w; ++v) {
          o[b * plane + u * w + v] = in[b * plane + ru * w + (w - v) % w];
        }
      }
    }
  });
  // The reflection is an involution, so it is its own adjoint.
  return make_op_result(out, "freq_reflect", {x},
                        [](const Tensor& g) -> std::vector<Tensor> { return {freq_reflect(g)}; });
}

ComplexTensor hermitian_part(const ComplexTensor& m) {
  return {mul_scalar(add(m.re, freq_reflect(m.re)), 0.5), mul_scalar(sub(m.im, freq_reflect(m.im)), 0.5)};
}

}  // namespace ssmoe
