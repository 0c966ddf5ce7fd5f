#pragma once

#include <cstdint>
#include <vector>

#include "ssmoe/tensor/rng.hpp"
#include "ssmoe/tensor/tensor.hpp"

namespace ssmoe::data {

struct ImagePair {
  Tensor hr;  // 3 x S x S
  Tensor lr;  // 3 x S/scale x S/scale
  int scale = 4;
};

/// Procedural HR image: oriented sinusoids, filled polygons and noise texture.
Tensor synthesize_image(std::int64_t size, std::uint64_t seed);

/// n pairs, sample i seeded by mix_seed(seed, i); LR by antialiased bicubic.
std::vector<ImagePair> make_synthetic_dataset(int n, std::int64_t hr_size, int scale, std::uint64_t seed);

/// Fraction of non-DC spectral energy at radial frequency above a quarter
/// cycle per pixel, averaged over channels and images.
double high_frequency_energy_fraction(const std::vector<Tensor>& images);

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& items);
/// Item i of a stacked tensor (copy).
Tensor unstack_at(const Tensor& batch, std::int64_t i);

}  // namespace ssmoe::data
