#include <cmath>
#include <numbers>

#include "iteration.hpp"
#include "ssmoe/tensor/ops.hpp"

namespace ssmoe {

using detail::broadcast_strides;
using detail::for_each_index;

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd, 1);
  for (std::size_t i = 0; i < nd; ++i) {
    const std::int64_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    const std::int64_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw TensorError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                        " are not broadcast-compatible");
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

namespace {

template <class Op>
Tensor binary_kernel(const Tensor& a, const Tensor& b, const char* name, Op op) {
  detail::require_defined(a, name);
  detail::require_defined(b, name);
  detail::require_same_dtype(a, b, name);
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  Tensor out = Tensor::empty(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<class T>(T) {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.mutable_data<T>();
    if (a.shape() == b.shape()) {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = op(x[i], y[i]);
    } else {
      for_each_index(out_shape, broadcast_strides(a.shape(), out_shape), broadcast_strides(b.shape(), out_shape),
                     [&](std::int64_t oi, std::int64_t ai, std::int64_t bi) { o[oi] = op(x[ai], y[bi]); });
    }
  });
  return out;
}

/// y = f(x) elementwise with dy/dx = df(x, y).
template <class Fwd, class Deriv>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Deriv df) {
  detail::require_defined(x, name);
  Tensor out = Tensor::empty(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(in[i]);
  });
  Tensor saved_out = out.detach();
  return make_op_result(out, name, {x}, [x, saved_out, df](const Tensor& g) -> std::vector<Tensor> {
    Tensor gx = Tensor::empty(x.shape(), x.dtype());
    dispatch(x.dtype(), [&]<class T>(T) {
      auto in = x.data<T>();
      auto y = saved_out.data<T>();
      auto gd = g.data<T>();
      auto o = gx.mutable_data<T>();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = gd[i] * df(in[i], y[i]);
    });
    return {gx};
  });
}

template <class T>
T sigmoid_of(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

}  // namespace

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  // Validates that `shape` broadcasts to x.shape().
  if (broadcast_shape(shape, x.shape(), "sum_to") != x.shape()) {
    throw TensorError("sum_to: " + shape_str(x.shape()) + " cannot reduce to " + shape_str(shape));
  }
  Tensor out = Tensor::zeros(shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    detail::Strides zero(x.shape().size(), 0);
    for_each_index(x.shape(), broadcast_strides(shape, x.shape()), zero,
                   [&](std::int64_t xi, std::int64_t ti, std::int64_t) { o[ti] += in[xi]; });
  });
  const Shape from = x.shape();
  return make_op_result(out, "sum_to", {x}, [from](const Tensor& g) -> std::vector<Tensor> {
    return {broadcast_to(g, from)};
  });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (broadcast_shape(x.shape(), shape, "broadcast_to") != shape) {
    throw TensorError("broadcast_to: " + shape_str(x.shape()) + " cannot expand to " + shape_str(shape));
  }
  Tensor out = Tensor::empty(shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    detail::Strides zero(shape.size(), 0);
    for_each_index(shape, broadcast_strides(x.shape(), shape), zero,
                   [&](std::int64_t oi, std::int64_t xi, std::int64_t) { o[oi] = in[xi]; });
  });
  const Shape from = x.shape();
  return make_op_result(out, "broadcast_to", {x}, [from](const Tensor& g) -> std::vector<Tensor> {
    return {sum_to(g, from)};
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = binary_kernel(a, b, "add", [](auto x, auto y) { return x + y; });
  const Shape sa = a.shape(), sb = b.shape();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return make_op_result(out, "add", {a, b}, [sa, sb, ga, gb](const Tensor& g) -> std::vector<Tensor> {
    return {ga ? sum_to(g, sa) : Tensor{}, gb ? sum_to(g, sb) : Tensor{}};
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = binary_kernel(a, b, "sub", [](auto x, auto y) { return x - y; });
  const Shape sa = a.shape(), sb = b.shape();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return make_op_result(out, "sub", {a, b}, [sa, sb, ga, gb](const Tensor& g) -> std::vector<Tensor> {
    return {ga ? sum_to(g, sa) : Tensor{}, gb ? sum_to(neg(g), sb) : Tensor{}};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = binary_kernel(a, b, "mul", [](auto x, auto y) { return x * y; });
  Tensor ad = a.detach(), bd = b.detach();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return make_op_result(out, "mul", {a, b}, [ad, bd, ga, gb](const Tensor& g) -> std::vector<Tensor> {
    return {ga ? sum_to(mul(g, bd), ad.shape()) : Tensor{}, gb ? sum_to(mul(g, ad), bd.shape()) : Tensor{}};
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Tensor out = binary_kernel(a, b, "div", [](auto x, auto y) { return x / y; });
  Tensor ad = a.detach(), bd = b.detach();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return make_op_result(out, "div", {a, b}, [ad, bd, ga, gb](const Tensor& g) -> std::vector<Tensor> {
    Tensor gra, grb;
    if (ga) gra = sum_to(div(g, bd), ad.shape());
    if (gb) grb = sum_to(neg(div(mul(g, ad), mul(bd, bd))), bd.shape());
    return {gra, grb};
  });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op(x, "add_scalar", [c](auto v) { return v + static_cast<decltype(v)>(c); },
                  [](auto v, auto) { return decltype(v){1}; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary_op(x, "mul_scalar", [c](auto v) { return v * static_cast<decltype(v)>(c); },
                  [c](auto v, auto) { return static_cast<decltype(v)>(c); });
}

Tensor neg(const Tensor& x) {
  return unary_op(x, "neg", [](auto v) { return -v; }, [](auto v, auto) { return decltype(v){-1}; });
}

Tensor square(const Tensor& x) {
  return unary_op(x, "square", [](auto v) { return v * v; }, [](auto v, auto) { return 2 * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(x, "sqrt", [](auto v) { return std::sqrt(v); },
                  [](auto v, auto y) { return y > 0 ? static_cast<decltype(v)>(0.5) / y : decltype(v){0}; });
}

Tensor abs(const Tensor& x) {
  return unary_op(x, "abs", [](auto v) { return std::abs(v); },
                  [](auto v, auto) { return static_cast<decltype(v)>((v > 0) - (v < 0)); });
}

Tensor exp(const Tensor& x) {
  return unary_op(x, "exp", [](auto v) { return std::exp(v); }, [](auto, auto y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(x, "log", [](auto v) { return std::log(v); }, [](auto v, auto) { return 1 / v; });
}

Tensor relu(const Tensor& x) {
  return unary_op(x, "relu", [](auto v) { return v > 0 ? v : decltype(v){0}; },
                  [](auto v, auto) { return static_cast<decltype(v)>(v > 0); });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(x, "sigmoid", [](auto v) { return sigmoid_of(v); }, [](auto, auto y) { return y * (1 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary_op(x, "tanh", [](auto v) { return std::tanh(v); }, [](auto, auto y) { return 1 - y * y; });
}

Tensor silu(const Tensor& x) {
  return unary_op(
      x, "silu", [](auto v) { return v * sigmoid_of(v); },
      [](auto v, auto) {
        const auto s = sigmoid_of(v);
        return s * (1 + v * (1 - s));
      });
}

Tensor gelu(const Tensor& x) {
  return unary_op(
      x, "gelu",
      [](auto v) {
        using T = decltype(v);
        return T(0.5) * v * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2)));
      },
      [](auto v, auto) {
        using T = decltype(v);
        const T cdf = T(0.5) * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2)));
        const T pdf = std::exp(T(-0.5) * v * v) * T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
        return cdf + v * pdf;
      });
}

}  // namespace ssmoe
