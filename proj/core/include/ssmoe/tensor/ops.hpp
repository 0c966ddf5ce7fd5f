#pragma once

#include <cstdint>
#include <vector>

#include "ssmoe/tensor/rng.hpp"
#include "ssmoe/tensor/tensor.hpp"

// Differentiable op set. Every function records history when grad mode is on
// and an input requires grad. Layout is row-major; images are NCHW.
namespace ssmoe {

// Elementwise, numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

Tensor neg(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor silu(const Tensor& x);
/// Exact (erf) form.
Tensor gelu(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op);
/// Sums `x` down to `shape` over broadcast dimensions.
Tensor sum_to(const Tensor& x, const Shape& shape);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_dim(const Tensor& x, int dim, bool keepdim = false);
Tensor mean_dim(const Tensor& x, int dim, bool keepdim = false);

// Shape manipulation.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& dims);
Tensor concat(const std::vector<Tensor>& xs, int dim);
Tensor narrow(const Tensor& x, int dim, std::int64_t start, std::int64_t length);
/// Rows of a 2-D tensor selected by index.
Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& index);
/// Inverse of gather_rows: a `rows`×D tensor of zeros with src[k] added at
/// row index[k].
Tensor scatter_rows(const Tensor& src, const std::vector<std::int64_t>& index, std::int64_t rows);

/// 2-D (M×K · K×N) or batched 3-D product, with optional transposition of
/// either operand's last two axes.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
/// x[..., in] · weight[out, in]ᵀ + bias[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// x[N, Cin, H, W] ⋆ weight[Cout, Cin, k, k]; bias may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride = 1, int padding = 0);
Tensor upsample_nearest2x(const Tensor& x);

/// Normalizes over (C/groups)·spatial per sample; gamma/beta are per channel.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Normalizes over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor softmax_lastdim(const Tensor& x);
/// q, k, v: [B, L, d]. softmax(q kᵀ / √d) v.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v);

Tensor dropout(const Tensor& x, double p, Rng& rng);

Tensor randn(const Shape& shape, Rng& rng, DType dt = DType::f32);
Tensor rand_uniform(const Shape& shape, double lo, double hi, Rng& rng, DType dt = DType::f32);

/// MAC counter fed by the forward kernels of matmul, conv2d and the
/// normalizations (one MAC per normalized element); used to cross-check
/// analytic cost accounting against executed work.
struct MacCounter {
  static void reset();
  static std::uint64_t value();
  static void add(std::uint64_t macs);
  static void enable(bool on);
};

}  // namespace ssmoe
