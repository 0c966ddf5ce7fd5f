#include <algorithm>
#include <numeric>

#include "iteration.hpp"
#include "ssmoe/tensor/ops.hpp"

namespace ssmoe {

using detail::for_each_index;

namespace {

struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t n = 1;
  std::int64_t inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.n = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// Zero tensor of `full` shape with `piece` written at [start, start+len) on
// `axis`. Used by narrow's backward.
Tensor embed_slice(const Tensor& piece, const Shape& full, int axis, std::int64_t start) {
  Tensor out = Tensor::zeros(full, piece.dtype());
  const AxisSplit fs = split_at(full, axis);
  const std::int64_t len = piece.shape()[static_cast<std::size_t>(axis)];
  dispatch(piece.dtype(), [&]<class T>(T) {
    auto src = piece.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::int64_t o = 0; o < fs.outer; ++o) {
      const T* s = src.data() + o * len * fs.inner;
      T* d = dst.data() + (o * fs.n + start) * fs.inner;
      std::copy(s, s + len * fs.inner, d);
    }
  });
  return out;
}

}  // namespace

Tensor sum(const Tensor& x) {
  detail::require_defined(x, "sum");
  Tensor out = Tensor::empty({}, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    double acc = 0.0;
    for (T v : x.data<T>()) acc += static_cast<double>(v);
    out.mutable_data<T>()[0] = static_cast<T>(acc);
  });
  const Shape s = x.shape();
  return make_op_result(out, "sum", {x}, [s](const Tensor& g) -> std::vector<Tensor> { return {broadcast_to(g, s)}; });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw TensorError("mean: empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_dim(const Tensor& x, int dim, bool keepdim) {
  detail::require_defined(x, "sum_dim");
  const int axis = detail::normalize_axis(dim, x.ndim(), "sum_dim");
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape kept = x.shape();
  kept[static_cast<std::size_t>(axis)] = 1;
  Tensor out = Tensor::zeros(kept, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::int64_t a = 0; a < sp.outer; ++a) {
      for (std::int64_t b = 0; b < sp.inner; ++b) {
        double acc = 0.0;
        for (std::int64_t k = 0; k < sp.n; ++k) acc += static_cast<double>(in[(a * sp.n + k) * sp.inner + b]);
        o[a * sp.inner + b] = static_cast<T>(acc);
      }
    }
  });
  const Shape s = x.shape();
  out = make_op_result(out, "sum_dim", {x}, [s, kept](const Tensor& g) -> std::vector<Tensor> {
    return {broadcast_to(reshape(g, kept), s)};
  });
  if (keepdim) return out;
  Shape squeezed = x.shape();
  squeezed.erase(squeezed.begin() + axis);
  return reshape(out, squeezed);
}

Tensor mean_dim(const Tensor& x, int dim, bool keepdim) {
  const double n = static_cast<double>(x.dim(dim));
  return mul_scalar(sum_dim(x, dim, keepdim), 1.0 / n);
}

Tensor reshape(const Tensor& x, Shape shape) {
  detail::require_defined(x, "reshape");
  int infer = -1;
  std::int64_t known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw TensorError("reshape: more than one -1 in " + shape_str(shape));
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) {
      throw TensorError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  }
  if (shape == x.shape()) return x;
  Tensor out = alias_with_shape(x, shape);
  const Shape s = x.shape();
  return make_op_result(out, "reshape", {x}, [s](const Tensor& g) -> std::vector<Tensor> { return {reshape(g, s)}; });
}

Tensor permute(const Tensor& x, const std::vector<int>& dims) {
  detail::require_defined(x, "permute");
  const int nd = x.ndim();
  if (static_cast<int>(dims.size()) != nd) {
    throw TensorError("permute: " + std::to_string(dims.size()) + " axes for shape " + shape_str(x.shape()));
  }
  std::vector<int> inverse(static_cast<std::size_t>(nd), -1);
  Shape out_shape(static_cast<std::size_t>(nd));
  const detail::Strides in_strides = detail::contiguous_strides(x.shape());
  detail::Strides read(static_cast<std::size_t>(nd));
  for (int i = 0; i < nd; ++i) {
    const int d = dims[static_cast<std::size_t>(i)];
    if (d < 0 || d >= nd || inverse[static_cast<std::size_t>(d)] != -1) {
      throw TensorError("permute: invalid axis order for shape " + shape_str(x.shape()));
    }
    inverse[static_cast<std::size_t>(d)] = i;
    out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(d)];
    read[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(d)];
  }
  Tensor out = Tensor::empty(out_shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    detail::Strides zero(static_cast<std::size_t>(nd), 0);
    for_each_index(out_shape, read, zero, [&](std::int64_t oi, std::int64_t ii, std::int64_t) { o[oi] = in[ii]; });
  });
  return make_op_result(out, "permute", {x}, [inverse](const Tensor& g) -> std::vector<Tensor> {
    return {permute(g, inverse)};
  });
}

Tensor concat(const std::vector<Tensor>& xs, int dim) {
  if (xs.empty()) throw TensorError("concat: no inputs");
  const Tensor& first = xs.front();
  detail::require_defined(first, "concat");
  const int axis = detail::normalize_axis(dim, first.ndim(), "concat");
  Shape out_shape = first.shape();
  std::int64_t total = 0;
  std::vector<std::int64_t> lengths;
  for (const auto& t : xs) {
    detail::require_defined(t, "concat");
    detail::require_same_dtype(first, t, "concat");
    bool ok = t.ndim() == first.ndim();
    for (int i = 0; ok && i < first.ndim(); ++i) {
      if (i != axis && t.shape()[static_cast<std::size_t>(i)] != first.shape()[static_cast<std::size_t>(i)]) ok = false;
    }
    if (!ok) {
      throw TensorError("concat: shape " + shape_str(t.shape()) + " incompatible with " + shape_str(first.shape()) +
                        " along axis " + std::to_string(axis));
    }
    lengths.push_back(t.shape()[static_cast<std::size_t>(axis)]);
    total += lengths.back();
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  Tensor out = Tensor::empty(out_shape, first.dtype());
  const AxisSplit os = split_at(out_shape, axis);
  dispatch(first.dtype(), [&]<class T>(T) {
    auto o = out.mutable_data<T>();
    for (std::int64_t a = 0; a < os.outer; ++a) {
      std::int64_t offset = 0;
      for (std::size_t k = 0; k < xs.size(); ++k) {
        auto in = xs[k].data<T>();
        const std::int64_t block = lengths[k] * os.inner;
        std::copy(in.begin() + a * block, in.begin() + (a + 1) * block, o.begin() + (a * os.n + offset) * os.inner);
        offset += lengths[k];
      }
    }
  });
  std::vector<bool> needs;
  for (const auto& t : xs) needs.push_back(t.requires_grad());
  return make_op_result(out, "concat", xs, [axis, lengths, needs](const Tensor& g) -> std::vector<Tensor> {
    std::vector<Tensor> grads;
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < lengths.size(); ++k) {
      grads.push_back(needs[k] ? narrow(g, axis, offset, lengths[k]) : Tensor{});
      offset += lengths[k];
    }
    return grads;
  });
}

Tensor narrow(const Tensor& x, int dim, std::int64_t start, std::int64_t length) {
  detail::require_defined(x, "narrow");
  const int axis = detail::normalize_axis(dim, x.ndim(), "narrow");
  const AxisSplit sp = split_at(x.shape(), axis);
  if (start < 0 || length < 0 || start + length > sp.n) {
    throw TensorError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                      ") outside axis of shape " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  Tensor out = Tensor::empty(out_shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::int64_t a = 0; a < sp.outer; ++a) {
      const auto src = in.begin() + (a * sp.n + start) * sp.inner;
      std::copy(src, src + length * sp.inner, o.begin() + a * length * sp.inner);
    }
  });
  const Shape full = x.shape();
  return make_op_result(out, "narrow", {x}, [full, axis, start](const Tensor& g) -> std::vector<Tensor> {
    return {embed_slice(g, full, axis, start)};
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& index) {
  detail::require_defined(x, "gather_rows");
  if (x.ndim() != 2) throw TensorError("gather_rows: expected 2-D input, got " + shape_str(x.shape()));
  const std::int64_t rows = x.dim(0), d = x.dim(1);
  for (auto i : index) {
    if (i < 0 || i >= rows) throw TensorError("gather_rows: index " + std::to_string(i) + " out of range");
  }
  Tensor out = Tensor::empty({static_cast<std::int64_t>(index.size()), d}, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t k = 0; k < index.size(); ++k) {
      std::copy(in.begin() + index[k] * d, in.begin() + (index[k] + 1) * d, o.begin() + static_cast<std::int64_t>(k) * d);
    }
  });
  return make_op_result(out, "gather_rows", {x}, [index, rows](const Tensor& g) -> std::vector<Tensor> {
    return {scatter_rows(g, index, rows)};
  });
}

Tensor scatter_rows(const Tensor& src, const std::vector<std::int64_t>& index, std::int64_t rows) {
  detail::require_defined(src, "scatter_rows");
  if (src.ndim() != 2 || src.dim(0) != static_cast<std::int64_t>(index.size())) {
    throw TensorError("scatter_rows: source " + shape_str(src.shape()) + " does not match " +
                      std::to_string(index.size()) + " indices");
  }
  const std::int64_t d = src.dim(1);
  Tensor out = Tensor::zeros({rows, d}, src.dtype());
  dispatch(src.dtype(), [&]<class T>(T) {
    auto in = src.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t k = 0; k < index.size(); ++k) {
      if (index[k] < 0 || index[k] >= rows) {
        throw TensorError("scatter_rows: index " + std::to_string(index[k]) + " out of range");
      }
      for (std::int64_t j = 0; j < d; ++j) o[index[k] * d + j] += in[static_cast<std::int64_t>(k) * d + j];
    }
  });
  return make_op_result(out, "scatter_rows", {src}, [index](const Tensor& g) -> std::vector<Tensor> {
    return {gather_rows(g, index)};
  });
}

}  // namespace ssmoe
