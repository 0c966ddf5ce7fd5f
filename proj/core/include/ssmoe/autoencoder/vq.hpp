#pragma once

#include <vector>

#include "ssmoe/nn/module.hpp"
#include "ssmoe/tensor/ops.hpp"

namespace ssmoe::autoencoder {

struct VqResult {
  Tensor z_q;                          // straight-through: forward = codes, backward = identity to z
  std::vector<std::int64_t> indices;   // one per spatial vector, row-major over (B, h, w)
  Tensor codebook_loss;                // mean ||sg(z) - e||^2
  Tensor commitment_loss;              // mean ||z - sg(e)||^2
  Tensor z_flat;                       // the quantized input as rows [B*h*w, D]
};

/// Nearest-neighbour (L2) vector quantizer over the channel axis of
/// [B, D, h, w] inputs.
class VectorQuantizer : public nn::Module {
 public:
  /// Codebook entries start uniform in [-1/K, 1/K].
  VectorQuantizer(std::int64_t num_entries, std::int64_t dim, Rng& rng);

  VqResult quantize(const Tensor& z) const;
  /// Index of the nearest entry for each row of `flat` [M, D]; ties go to the lowest index.
  std::vector<std::int64_t> nearest(const Tensor& flat) const;

  std::int64_t num_entries() const { return codebook.dim(0); }
  std::int64_t dim() const { return codebook.dim(1); }

  Tensor codebook;  // [K, D]
};

}  // namespace ssmoe::autoencoder
