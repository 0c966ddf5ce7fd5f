#pragma once

#include <complex>
#include <cstddef>
#include <span>

#include "ssmoe/tensor/tensor.hpp"

namespace ssmoe {

/// Real and imaginary planes of a complex array; both share one shape.
struct ComplexTensor {
  Tensor re;
  Tensor im;

  const Shape& shape() const { return re.shape(); }
};

bool is_power_of_two(std::int64_t n);

/// In-place radix-2 transform of `h`×`w` row-major data. Unnormalized
/// forward (e^{-2πi·}); the inverse divides by h·w. Extents must be powers
/// of two.
template <class T>
void fft2_inplace(std::span<std::complex<T>> data, std::int64_t h, std::int64_t w, bool inverse);

/// 2-D DFT over the last two axes of `x`, which must be powers of two.
/// F(u,v) = Σ x(m,n) e^{-2πi(um/H + vn/W)}.
ComplexTensor fft2(const Tensor& x);
ComplexTensor fft2(const ComplexTensor& x);
/// Inverse of fft2 (includes the 1/(H·W) factor).
ComplexTensor ifft2(const ComplexTensor& x);

ComplexTensor cadd(const ComplexTensor& a, const ComplexTensor& b);
/// Elementwise complex product (broadcasting as for mul).
ComplexTensor cmul(const ComplexTensor& a, const ComplexTensor& b);
/// |z| = sqrt(re² + im² + eps).
Tensor cabs(const ComplexTensor& z, double eps = 0.0);
/// |z|² = re² + im².
Tensor cabs2(const ComplexTensor& z);

/// Index reflection over the last two axes: out(u, v) = x(-u mod H, -v mod W).
Tensor freq_reflect(const Tensor& x);
/// Projects a frequency-domain mask onto its Hermitian-symmetric part,
/// M'(u,v) = (M(u,v) + conj(M(-u,-v))) / 2, so that filtering a real signal
/// yields a real signal.
ComplexTensor hermitian_part(const ComplexTensor& m);

}  // namespace ssmoe
