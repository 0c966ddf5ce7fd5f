#include <Eigen/Core>
#include <vector>

#include "iteration.hpp"
#include "ssmoe/tensor/ops.hpp"

namespace ssmoe {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MutMap = Eigen::Map<RowMat<T>>;

bool g_mac_enabled = false;
std::uint64_t g_macs = 0;

template <class T>
void gemm(const T* a, std::int64_t ar, std::int64_t ac, bool ta, const T* b, std::int64_t br, std::int64_t bc,
          bool tb, T* c, std::int64_t cr, std::int64_t cc, bool accumulate) {
  ConstMap<T> A(a, ar, ac);
  ConstMap<T> B(b, br, bc);
  MutMap<T> C(c, cr, cc);
  if (accumulate) {
    if (!ta && !tb) C.noalias() += A * B;
    else if (ta && !tb) C.noalias() += A.transpose() * B;
    else if (!ta && tb) C.noalias() += A * B.transpose();
    else C.noalias() += A.transpose() * B.transpose();
  } else {
    if (!ta && !tb) C.noalias() = A * B;
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
}

struct ConvGeom {
  std::int64_t n, cin, h, w, cout, k, ho, wo;
  int stride, pad;
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::int64_t hw_out = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        T* dst = col + ((c * g.k + ki) * g.k + kj) * hw_out;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ki;
          T* row = dst + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(row, row + g.wo, T(0));
            continue;
          }
          const T* src = x + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kj;
            row[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, const ConvGeom& g, T* x) {
  const std::int64_t hw_out = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t ki = 0; ki < g.k; ++ki) {
      for (std::int64_t kj = 0; kj < g.k; ++kj) {
        const T* src = col + ((c * g.k + ki) * g.k + kj) * hw_out;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = x + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) dst[ix] += src[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

void MacCounter::reset() { g_macs = 0; }
std::uint64_t MacCounter::value() { return g_macs; }
void MacCounter::add(std::uint64_t macs) {
  if (g_mac_enabled) g_macs += macs;
}
void MacCounter::enable(bool on) { g_mac_enabled = on; }

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  detail::require_defined(a, "matmul");
  detail::require_defined(b, "matmul");
  detail::require_same_dtype(a, b, "matmul");
  std::int64_t batch = 1;
  if (a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0)) {
    batch = a.dim(0);
  } else if (!(a.ndim() == 2 && b.ndim() == 2)) {
    throw TensorError("matmul: unsupported operand shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::int64_t ar = a.dim(-2), ac = a.dim(-1), br = b.dim(-2), bc = b.dim(-1);
  const std::int64_t m = trans_a ? ac : ar;
  const std::int64_t ka = trans_a ? ar : ac;
  const std::int64_t kb = trans_b ? bc : br;
  const std::int64_t n = trans_b ? br : bc;
  if (ka != kb) {
    throw TensorError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  }
  Shape out_shape = a.ndim() == 3 ? Shape{batch, m, n} : Shape{m, n};
  Tensor out = Tensor::empty(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<class T>(T) {
    auto pa = a.data<T>().data();
    auto pb = b.data<T>().data();
    auto pc = out.mutable_data<T>().data();
    for (std::int64_t i = 0; i < batch; ++i) {
      gemm<T>(pa + i * ar * ac, ar, ac, trans_a, pb + i * br * bc, br, bc, trans_b, pc + i * m * n, m, n, false);
    }
  });
  MacCounter::add(static_cast<std::uint64_t>(batch * m * n * ka));
  Tensor ad = a.detach(), bd = b.detach();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return make_op_result(out, "matmul", {a, b},
                        [ad, bd, ga, gb, trans_a, trans_b](const Tensor& g) -> std::vector<Tensor> {
                          Tensor da, db;
                          if (!trans_a && !trans_b) {
                            if (ga) da = matmul(g, bd, false, true);
                            if (gb) db = matmul(ad, g, true, false);
                          } else if (trans_a && !trans_b) {
                            if (ga) da = matmul(bd, g, false, true);
                            if (gb) db = matmul(ad, g, false, false);
                          } else if (!trans_a && trans_b) {
                            if (ga) da = matmul(g, bd, false, false);
                            if (gb) db = matmul(g, ad, true, false);
                          } else {
                            if (ga) da = matmul(bd, g, true, true);
                            if (gb) db = matmul(g, ad, true, true);
                          }
                          return {da, db};
                        });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require_defined(x, "linear");
  if (weight.ndim() != 2 || x.dim(-1) != weight.dim(1)) {
    throw TensorError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                      shape_str(weight.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = weight.dim(0);
  Tensor y = matmul(reshape(x, {-1, x.dim(-1)}), weight, false, true);
  if (bias.defined()) y = add(y, bias);
  return reshape(y, out_shape);
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  detail::require_defined(x, "conv2d");
  detail::require_defined(weight, "conv2d");
  detail::require_same_dtype(x, weight, "conv2d");
  if (x.ndim() != 4 || weight.ndim() != 4 || x.dim(1) != weight.dim(1) || weight.dim(2) != weight.dim(3)) {
    throw TensorError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                      shape_str(weight.shape()));
  }
  if (stride < 1 || padding < 0) throw TensorError("conv2d: invalid stride/padding");
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != weight.dim(0))) {
    throw TensorError("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
                      shape_str(weight.shape()));
  }
  ConvGeom g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = stride;
  g.pad = padding;
  g.ho = (g.h + 2 * padding - g.k) / stride + 1;
  g.wo = (g.w + 2 * padding - g.k) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw TensorError("conv2d: kernel larger than padded input " + shape_str(x.shape()));

  const std::int64_t ckk = g.cin * g.k * g.k;
  const std::int64_t hw_out = g.ho * g.wo;
  Tensor out = Tensor::empty({g.n, g.cout, g.ho, g.wo}, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    const T* px = x.data<T>().data();
    const T* pw = weight.data<T>().data();
    T* po = out.mutable_data<T>().data();
    std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(ckk * hw_out));
    for (std::int64_t n = 0; n < g.n; ++n) {
      const T* xn = px + n * g.cin * g.h * g.w;
      const T* cn = xn;
      if (!g.pointwise()) {
        im2col(xn, g, col.data());
        cn = col.data();
      }
      T* on = po + n * g.cout * hw_out;
      gemm<T>(pw, g.cout, ckk, false, cn, ckk, hw_out, false, on, g.cout, hw_out, false);
      if (bias.defined()) {
        auto pb = bias.data<T>();
        for (std::int64_t c = 0; c < g.cout; ++c) {
          for (std::int64_t i = 0; i < hw_out; ++i) on[c * hw_out + i] += pb[static_cast<std::size_t>(c)];
        }
      }
    }
  });
  MacCounter::add(static_cast<std::uint64_t>(g.n * g.cout * hw_out * ckk));

  Tensor xd = x.detach(), wd = weight.detach();
  const bool gx = x.requires_grad(), gw = weight.requires_grad(), gb = bias.defined() && bias.requires_grad();
  std::vector<Tensor> inputs{x, weight};
  inputs.push_back(bias);
  return make_op_result(out, "conv2d", inputs, [xd, wd, g, gx, gw, gb](const Tensor& grad) -> std::vector<Tensor> {
    const std::int64_t ckk = g.cin * g.k * g.k;
    const std::int64_t hw_out = g.ho * g.wo;
    Tensor dx = gx ? Tensor::zeros(xd.shape(), xd.dtype()) : Tensor{};
    Tensor dw = gw ? Tensor::zeros(wd.shape(), wd.dtype()) : Tensor{};
    Tensor db = gb ? Tensor::zeros({g.cout}, wd.dtype()) : Tensor{};
    dispatch(xd.dtype(), [&]<class T>(T) {
      const T* px = xd.data<T>().data();
      const T* pw = wd.data<T>().data();
      const T* pg = grad.data<T>().data();
      std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(ckk * hw_out));
      for (std::int64_t n = 0; n < g.n; ++n) {
        const T* gn = pg + n * g.cout * hw_out;
        if (gw) {
          const T* xn = px + n * g.cin * g.h * g.w;
          const T* cn = xn;
          if (!g.pointwise()) {
            im2col(xn, g, col.data());
            cn = col.data();
          }
          gemm<T>(gn, g.cout, hw_out, false, cn, ckk, hw_out, true, dw.mutable_data<T>().data(), g.cout, ckk, true);
        }
        if (gx) {
          T* dxn = dx.mutable_data<T>().data() + n * g.cin * g.h * g.w;
          if (g.pointwise()) {
            gemm<T>(pw, g.cout, ckk, true, gn, g.cout, hw_out, false, dxn, ckk, hw_out, true);
          } else {
            gemm<T>(pw, g.cout, ckk, true, gn, g.cout, hw_out, false, col.data(), ckk, hw_out, false);
            col2im(col.data(), g, dxn);
          }
        }
        if (gb) {
          auto pdb = db.mutable_data<T>();
          for (std::int64_t c = 0; c < g.cout; ++c) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < hw_out; ++i) acc += static_cast<double>(gn[c * hw_out + i]);
            pdb[static_cast<std::size_t>(c)] += static_cast<T>(acc);
          }
        }
      }
    });
    return {dx, dw, db};
  });
}

Tensor upsample_nearest2x(const Tensor& x) {
  detail::require_defined(x, "upsample_nearest2x");
  if (x.ndim() != 4) throw TensorError("upsample_nearest2x: expected NCHW, got " + shape_str(x.shape()));
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = Tensor::empty({x.dim(0), x.dim(1), 2 * h, 2 * w}, x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::int64_t p = 0; p < planes; ++p) {
      for (std::int64_t y = 0; y < 2 * h; ++y) {
        for (std::int64_t xx = 0; xx < 2 * w; ++xx) {
          o[(p * 2 * h + y) * 2 * w + xx] = in[(p * h + y / 2) * w + xx / 2];
        }
      }
    }
  });
  const Shape s = x.shape();
  return make_op_result(out, "upsample_nearest2x", {x}, [s](const Tensor& g) -> std::vector<Tensor> {
    Tensor gx = Tensor::zeros(s, g.dtype());
    const std::int64_t planes = s[0] * s[1], h = s[2], w = s[3];
    dispatch(g.dtype(), [&]<class T>(T) {
      auto gi = g.data<T>();
      auto o = gx.mutable_data<T>();
      for (std::int64_t p = 0; p < planes; ++p) {
        for (std::int64_t y = 0; y < 2 * h; ++y) {
          for (std::int64_t xx = 0; xx < 2 * w; ++xx) {
            o[(p * h + y / 2) * w + xx / 2] += gi[(p * 2 * h + y) * 2 * w + xx];
          }
        }
      }
    });
    return {gx};
  });
}

}  // namespace ssmoe
