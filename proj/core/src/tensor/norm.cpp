#include <cmath>
#include <limits>

#include "iteration.hpp"
#include "ssmoe/tensor/ops.hpp"

namespace ssmoe {

namespace {

// Shared normalization core. The input is viewed as `rows` groups of `len`
// contiguous values; affine parameter index for element j of row r is
// param_of(r, j).
struct NormPlan {
  std::int64_t rows = 0;
  std::int64_t len = 0;
};

template <class T, class ParamOf>
void norm_forward(const T* x, const T* gamma, const T* beta, const NormPlan& p, double eps, ParamOf param_of, T* y,
                  std::vector<double>& mean, std::vector<double>& rstd) {
  mean.assign(static_cast<std::size_t>(p.rows), 0.0);
  rstd.assign(static_cast<std::size_t>(p.rows), 0.0);
  for (std::int64_t r = 0; r < p.rows; ++r) {
    const T* xr = x + r * p.len;
    double s = 0.0;
    for (std::int64_t j = 0; j < p.len; ++j) s += static_cast<double>(xr[j]);
    const double mu = s / static_cast<double>(p.len);
    double v = 0.0;
    for (std::int64_t j = 0; j < p.len; ++j) {
      const double d = static_cast<double>(xr[j]) - mu;
      v += d * d;
    }
    const double rs = 1.0 / std::sqrt(v / static_cast<double>(p.len) + eps);
    mean[static_cast<std::size_t>(r)] = mu;
    rstd[static_cast<std::size_t>(r)] = rs;
    T* yr = y + r * p.len;
    for (std::int64_t j = 0; j < p.len; ++j) {
      const auto c = param_of(r, j);
      yr[j] = static_cast<T>((static_cast<double>(xr[j]) - mu) * rs) * gamma[c] + beta[c];
    }
  }
}

template <class T, class ParamOf>
void norm_backward(const T* x, const T* gamma, const T* g, const NormPlan& p, ParamOf param_of,
                   const std::vector<double>& mean, const std::vector<double>& rstd, T* dx, double* dgamma,
                   double* dbeta) {
  const double inv_len = 1.0 / static_cast<double>(p.len);
  for (std::int64_t r = 0; r < p.rows; ++r) {
    const T* xr = x + r * p.len;
    const T* gr = g + r * p.len;
    const double mu = mean[static_cast<std::size_t>(r)];
    const double rs = rstd[static_cast<std::size_t>(r)];
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (std::int64_t j = 0; j < p.len; ++j) {
      const auto c = param_of(r, j);
      const double xhat = (static_cast<double>(xr[j]) - mu) * rs;
      const double dxhat = static_cast<double>(gr[j]) * static_cast<double>(gamma[c]);
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      if (dgamma) dgamma[c] += static_cast<double>(gr[j]) * xhat;
      if (dbeta) dbeta[c] += static_cast<double>(gr[j]);
    }
    if (!dx) continue;
    T* dxr = dx + r * p.len;
    for (std::int64_t j = 0; j < p.len; ++j) {
      const auto c = param_of(r, j);
      const double xhat = (static_cast<double>(xr[j]) - mu) * rs;
      const double dxhat = static_cast<double>(gr[j]) * static_cast<double>(gamma[c]);
      dxr[j] = static_cast<T>(rs * (dxhat - sum_dxhat * inv_len - xhat * sum_dxhat_xhat * inv_len));
    }
  }
}

Tensor from_doubles(const std::vector<double>& v, const Shape& s, DType dt) { return Tensor::from_values(s, v, dt); }

}  // namespace

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps) {
  detail::require_defined(x, "group_norm");
  if (x.ndim() < 2) throw TensorError("group_norm: expected at least 2-D input, got " + shape_str(x.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1);
  if (groups <= 0 || c % groups != 0) {
    throw TensorError("group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) +
                      " groups");
  }
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw TensorError("group_norm: affine shapes " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                      " do not match " + std::to_string(c) + " channels");
  }
  const std::int64_t spatial = x.numel() / (n * c);
  const std::int64_t cg = c / groups;
  NormPlan plan{n * groups, cg * spatial};
  auto param_of = [groups, cg, spatial](std::int64_t r, std::int64_t j) {
    return static_cast<std::size_t>((r % groups) * cg + j / spatial);
  };
  Tensor out = Tensor::empty(x.shape(), x.dtype());
  auto mean = std::make_shared<std::vector<double>>();
  auto rstd = std::make_shared<std::vector<double>>();
  dispatch(x.dtype(), [&]<class T>(T) {
    norm_forward<T>(x.data<T>().data(), gamma.data<T>().data(), beta.data<T>().data(), plan, eps, param_of,
                    out.mutable_data<T>().data(), *mean, *rstd);
  });
  MacCounter::add(static_cast<std::uint64_t>(x.numel()));
  Tensor xd = x.detach(), gd = gamma.detach();
  const bool gx = x.requires_grad(), gg = gamma.requires_grad(), gbb = beta.requires_grad();
  return make_op_result(out, "group_norm", {x, gamma, beta},
                        [xd, gd, plan, param_of, mean, rstd, gx, gg, gbb, c](const Tensor& g) -> std::vector<Tensor> {
                          Tensor dx = gx ? Tensor::empty(xd.shape(), xd.dtype()) : Tensor{};
                          std::vector<double> dgamma(static_cast<std::size_t>(c), 0.0);
                          std::vector<double> dbeta(static_cast<std::size_t>(c), 0.0);
                          dispatch(xd.dtype(), [&]<class T>(T) {
                            norm_backward<T>(xd.data<T>().data(), gd.data<T>().data(), g.data<T>().data(), plan,
                                             param_of, *mean, *rstd, gx ? dx.mutable_data<T>().data() : nullptr,
                                             dgamma.data(), dbeta.data());
                          });
                          return {dx, gg ? from_doubles(dgamma, {c}, xd.dtype()) : Tensor{},
                                  gbb ? from_doubles(dbeta, {c}, xd.dtype()) : Tensor{}};
                        });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  detail::require_defined(x, "layer_norm");
  const std::int64_t d = x.dim(-1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw TensorError("layer_norm: affine shapes " + shape_str(gamma.shape()) + " do not match last axis of " +
                      shape_str(x.shape()));
  }
  NormPlan plan{x.numel() / d, d};
  auto param_of = [](std::int64_t, std::int64_t j) { return static_cast<std::size_t>(j); };
  Tensor out = Tensor::empty(x.shape(), x.dtype());
  auto mean = std::make_shared<std::vector<double>>();
  auto rstd = std::make_shared<std::vector<double>>();
  dispatch(x.dtype(), [&]<class T>(T) {
    norm_forward<T>(x.data<T>().data(), gamma.data<T>().data(), beta.data<T>().data(), plan, eps, param_of,
                    out.mutable_data<T>().data(), *mean, *rstd);
  });
  MacCounter::add(static_cast<std::uint64_t>(x.numel()));
  Tensor xd = x.detach(), gd = gamma.detach();
  const bool gx = x.requires_grad(), gg = gamma.requires_grad(), gbb = beta.requires_grad();
  return make_op_result(out, "layer_norm", {x, gamma, beta},
                        [xd, gd, plan, param_of, mean, rstd, gx, gg, gbb, d](const Tensor& g) -> std::vector<Tensor> {
                          Tensor dx = gx ? Tensor::empty(xd.shape(), xd.dtype()) : Tensor{};
                          std::vector<double> dgamma(static_cast<std::size_t>(d), 0.0);
                          std::vector<double> dbeta(static_cast<std::size_t>(d), 0.0);
                          dispatch(xd.dtype(), [&]<class T>(T) {
                            norm_backward<T>(xd.data<T>().data(), gd.data<T>().data(), g.data<T>().data(), plan,
                                             param_of, *mean, *rstd, gx ? dx.mutable_data<T>().data() : nullptr,
                                             dgamma.data(), dbeta.data());
                          });
                          return {dx, gg ? from_doubles(dgamma, {d}, xd.dtype()) : Tensor{},
                                  gbb ? from_doubles(dbeta, {d}, xd.dtype()) : Tensor{}};
                        });
}

Tensor softmax_lastdim(const Tensor& x) {
  detail::require_defined(x, "softmax");
  const std::int64_t d = x.dim(-1);
  const std::int64_t rows = x.numel() / d;
  Tensor out = Tensor::empty(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto in = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* xr = in.data() + r * d;
      T* yr = o.data() + r * d;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t j = 0; j < d; ++j) mx = std::max(mx, xr[j]);
      double s = 0.0;
      for (std::int64_t j = 0; j < d; ++j) {
        yr[j] = std::exp(xr[j] - mx);
        s += static_cast<double>(yr[j]);
      }
      const T inv = static_cast<T>(1.0 / s);
      for (std::int64_t j = 0; j < d; ++j) yr[j] *= inv;
    }
  });
  Tensor yd = out.detach();
  return make_op_result(out, "softmax", {x}, [yd, d, rows](const Tensor& g) -> std::vector<Tensor> {
    Tensor gx = Tensor::empty(yd.shape(), yd.dtype());
    dispatch(yd.dtype(), [&]<class T>(T) {
      auto y = yd.data<T>();
      auto gi = g.data<T>();
      auto o = gx.mutable_data<T>();
      for (std::int64_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < d; ++j) dot += static_cast<double>(gi[r * d + j] * y[r * d + j]);
        for (std::int64_t j = 0; j < d; ++j) {
          o[r * d + j] = y[r * d + j] * (gi[r * d + j] - static_cast<T>(dot));
        }
      }
    });
    return {gx};
  });
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.ndim() != 3 || k.shape() != q.shape() || v.ndim() != 3 || v.dim(0) != q.dim(0) || v.dim(1) != k.dim(1)) {
    throw TensorError("attention: incompatible q/k/v shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) +
                      ", " + shape_str(v.shape()));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
  Tensor scores = mul_scalar(matmul(q, k, false, true), scale);
  return matmul(softmax_lastdim(scores), v);
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw TensorError("dropout: probability must be < 1");
  Tensor mask = Tensor::empty(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>(T) {
    auto m = mask.mutable_data<T>();
    const T keep = static_cast<T>(1.0 / (1.0 - p));
    for (auto& v : m) v = rng.uniform() < p ? T(0) : keep;
  });
  return mul(x, mask);
}

Tensor randn(const Shape& shape, Rng& rng, DType dt) {
  Tensor t = Tensor::empty(shape, dt);
  dispatch(dt, [&]<class T>(T) {
    for (auto& v : t.mutable_data<T>()) v = static_cast<T>(rng.normal());
  });
  return t;
}

Tensor rand_uniform(const Shape& shape, double lo, double hi, Rng& rng, DType dt) {
  Tensor t = Tensor::empty(shape, dt);
  dispatch(dt, [&]<class T>(T) {
    for (auto& v : t.mutable_data<T>()) v = static_cast<T>(rng.uniform(lo, hi));
  });
  return t;
}

}  // namespace ssmoe
