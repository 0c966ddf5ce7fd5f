#include "ssmoe/nn/layers.hpp"

#include <cmath>

namespace ssmoe::nn {

Tensor fan_in_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rand_uniform(shape, -bound, bound, rng);
}

Linear::Linear(std::int64_t in, std::int64_t out, Rng& rng, bool with_bias) {
  register_parameter("weight", weight, fan_in_uniform({out, in}, in, rng));
  if (with_bias) register_parameter("bias", bias, fan_in_uniform({out}, in, rng));
}

void Linear::zero_init() {
  weight.copy_from(Tensor::zeros(weight.shape()));
  if (bias.defined()) bias.copy_from(Tensor::zeros(bias.shape()));
}

Conv2d::Conv2d(std::int64_t in, std::int64_t out, int kernel, Rng& rng, int stride, int padding, bool with_bias)
    : kernel_(kernel), stride_(stride), padding_(padding < 0 ? kernel / 2 : padding) {
  const std::int64_t fan_in = in * kernel * kernel;
  register_parameter("weight", weight, fan_in_uniform({out, in, kernel, kernel}, fan_in, rng));
  if (with_bias) register_parameter("bias", bias, fan_in_uniform({out}, fan_in, rng));
}

void Conv2d::zero_init() {
  weight.copy_from(Tensor::zeros(weight.shape()));
  if (bias.defined()) bias.copy_from(Tensor::zeros(bias.shape()));
}

GroupNorm::GroupNorm(int groups, std::int64_t channels, double eps) : groups_(groups), eps_(eps) {
  register_parameter("gamma", gamma, Tensor::full({channels}, 1.0));
  register_parameter("beta", beta, Tensor::zeros({channels}));
}

LayerNorm::LayerNorm(std::int64_t dim, double eps) : eps_(eps) {
  register_parameter("gamma", gamma, Tensor::full({dim}, 1.0));
  register_parameter("beta", beta, Tensor::zeros({dim}));
}

int norm_groups(std::int64_t channels, int preferred) {
  for (int g = preferred; g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

}  // namespace ssmoe::nn
