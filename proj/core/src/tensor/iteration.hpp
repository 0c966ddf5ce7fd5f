#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssmoe/tensor/tensor.hpp"

namespace ssmoe::detail {

using Strides = std::vector<std::int64_t>;

inline Strides contiguous_strides(const Shape& shape) {
  Strides s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(i) + 1] * shape[static_cast<std::size_t>(i) + 1];
  }
  return s;
}

/// Strides for reading `in` while iterating over `out` (right-aligned
/// broadcasting; size-1 axes get stride 0).
inline Strides broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t nd = out.size();
  const std::size_t off = nd - in.size();
  const Strides cs = contiguous_strides(in);
  Strides s(nd, 0);
  for (std::size_t i = 0; i < in.size(); ++i) s[off + i] = in[i] == 1 ? 0 : cs[i];
  return s;
}

/// Calls f(out_flat, a_off, b_off) for every element of `out` in row-major
/// order.
template <class F>
void for_each_index(const Shape& out, const Strides& sa, const Strides& sb, F&& f) {
  const std::size_t nd = out.size();
  if (nd == 0) {
    f(std::int64_t{0}, std::int64_t{0}, std::int64_t{0});
    return;
  }
  std::int64_t total = 1;
  for (auto d : out) total *= d;
  if (total == 0) return;
  const std::int64_t inner = out[nd - 1];
  const std::int64_t ia = sa[nd - 1];
  const std::int64_t ib = sb[nd - 1];
  const std::int64_t outer = total / inner;
  std::vector<std::int64_t> idx(nd - 1, 0);
  std::int64_t a_off = 0;
  std::int64_t b_off = 0;
  for (std::int64_t o = 0; o < outer; ++o) {
    const std::int64_t base = o * inner;
    for (std::int64_t j = 0; j < inner; ++j) f(base + j, a_off + j * ia, b_off + j * ib);
    for (int d = static_cast<int>(nd) - 2; d >= 0; --d) {
      const auto du = static_cast<std::size_t>(d);
      ++idx[du];
      a_off += sa[du];
      b_off += sb[du];
      if (idx[du] < out[du]) break;
      a_off -= sa[du] * out[du];
      b_off -= sb[du] * out[du];
      idx[du] = 0;
    }
  }
}

inline void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw TensorError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                      dtype_name(b.dtype()));
  }
}

inline void require_defined(const Tensor& a, const char* op) {
  if (!a.defined()) throw TensorError(std::string(op) + ": undefined input tensor");
}

inline int normalize_axis(int axis, int ndim, const char* op) {
  if (axis < 0) axis += ndim;
  if (axis < 0 || axis >= ndim) throw TensorError(std::string(op) + ": axis out of range");
  return axis;
}

}  // namespace ssmoe::detail
