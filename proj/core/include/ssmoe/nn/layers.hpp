#pragma once

#include "ssmoe/nn/module.hpp"
#include "ssmoe/tensor/ops.hpp"

namespace ssmoe::nn {

/// Uniform(-bound, bound) with bound = 1/sqrt(fan_in).
Tensor fan_in_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng);

class Linear : public Module {
 public:
  Linear(std::int64_t in, std::int64_t out, Rng& rng, bool bias = true);
  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  void zero_init();

  Tensor weight;  // [out, in]
  Tensor bias;    // [out] or undefined
};

class Conv2d : public Module {
 public:
  Conv2d(std::int64_t in, std::int64_t out, int kernel, Rng& rng, int stride = 1, int padding = -1, bool bias = true);
  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, stride_, padding_); }
  void zero_init();

  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int padding() const { return padding_; }
  std::int64_t in_channels() const { return weight.dim(1); }
  std::int64_t out_channels() const { return weight.dim(0); }

  Tensor weight;  // [out, in, k, k]
  Tensor bias;

 private:
  int kernel_, stride_, padding_;
};

class GroupNorm : public Module {
 public:
  GroupNorm(int groups, std::int64_t channels, double eps = 1e-6);
  Tensor forward(const Tensor& x) const { return group_norm(x, groups_, gamma, beta, eps_); }
  int groups() const { return groups_; }

  Tensor gamma, beta;

 private:
  int groups_;
  double eps_;
};

class LayerNorm : public Module {
 public:
  explicit LayerNorm(std::int64_t dim, double eps = 1e-5);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps_); }

  Tensor gamma, beta;

 private:
  double eps_;
};

/// Largest group count <= preferred that divides channels.
int norm_groups(std::int64_t channels, int preferred);

}  // namespace ssmoe::nn
