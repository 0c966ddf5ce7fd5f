#include "ssmoe/autoencoder/vq.hpp"

#include <limits>

namespace ssmoe::autoencoder {

VectorQuantizer::VectorQuantizer(std::int64_t num_entries, std::int64_t dim, Rng& rng) {
  if (num_entries < 1 || dim < 1) throw std::invalid_argument("vq: codebook must be non-empty");
  const double bound = 1.0 / static_cast<double>(num_entries);
  register_parameter("codebook", codebook, rand_uniform({num_entries, dim}, -bound, bound, rng));
}

std::vector<std::int64_t> VectorQuantizer::nearest(const Tensor& flat) const {
  const std::int64_t m = flat.dim(0), d = flat.dim(1), k = num_entries();
  const auto x = flat.to_vector();
  const auto e = codebook.to_vector();
  std::vector<std::int64_t> out(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::int64_t arg = 0;
    for (std::int64_t j = 0; j < k; ++j) {
      double dist = 0.0;
      for (std::int64_t c = 0; c < d; ++c) {
        const double diff = x[static_cast<std::size_t>(i * d + c)] - e[static_cast<std::size_t>(j * d + c)];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        arg = j;
      }
    }
    out[static_cast<std::size_t>(i)] = arg;
  }
  return out;
}

VqResult VectorQuantizer::quantize(const Tensor& z) const {
  if (z.ndim() != 4 || z.dim(1) != dim()) {
    throw TensorError("vq: expected [B, " + std::to_string(dim()) + ", h, w], got " + shape_str(z.shape()));
  }
  const std::int64_t b = z.dim(0), h = z.dim(2), w = z.dim(3);
  Tensor flat = reshape(permute(z, {0, 2, 3, 1}), {b * h * w, dim()});
  VqResult r;
  r.z_flat = flat;
  {
    NoGradGuard ng;
    r.indices = nearest(flat);
  }
  Tensor e = gather_rows(codebook, r.indices);
  r.codebook_loss = mean(square(sub(flat.detach(), e)));
  r.commitment_loss = mean(square(sub(flat, e.detach())));
  // Forward value is exactly e; the gradient passes to flat unchanged.
  Tensor st = add(e.detach(), sub(flat, flat.detach()));
  r.z_q = permute(reshape(st, {b, h, w, dim()}), {0, 3, 1, 2});
  return r;
}

}  // namespace ssmoe::autoencoder
