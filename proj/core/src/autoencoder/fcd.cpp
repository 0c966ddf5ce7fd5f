#include "ssmoe/autoencoder/fcd.hpp"

#include <algorithm>
#include <cmath>

namespace ssmoe::autoencoder {

FusionBlock::FusionBlock(std::int64_t channels, int groups, Rng& rng)
    : conv1(2 * channels, channels, 3, rng), norm(groups, channels), conv2(channels, channels, 3, rng) {
  conv2.zero_init();
  register_module("conv1", conv1);
  register_module("norm", norm);
  register_module("conv2", conv2);
}

Tensor FusionBlock::forward(const Tensor& f_lr, const Tensor& f_d) const {
  if (f_lr.shape() != f_d.shape()) {
    throw TensorError("fusion: lr features " + shape_str(f_lr.shape()) + " do not match decoder features " +
                      shape_str(f_d.shape()));
  }
  Tensor h = silu(norm.forward(conv1.forward(concat({f_lr, f_d}, 1))));
  return add(f_d, conv2.forward(h));
}

Tensor frequency_filter(const Tensor& x, const ComplexTensor& mask) {
  return ifft2(cmul(hermitian_part(mask), fft2(x))).re;
}

AffBlock::AffBlock(std::int64_t channels, Rng& rng)
    : pre(channels, channels, 1, rng),
      gen1(channels, channels, 1, rng),
      gen_re(channels, channels, 1, rng),
      gen_im(channels, channels, 1, rng),
      post(channels, channels, 1, rng) {
  gen_re.zero_init();
  gen_im.zero_init();
  post.zero_init();
  register_module("pre", pre);
  register_module("gen1", gen1);
  register_module("gen_re", gen_re);
  register_module("gen_im", gen_im);
  register_module("post", post);
}

ComplexTensor AffBlock::make_mask(const ComplexTensor& spectrum) const {
  Tensor feat = gelu(gen1.forward(log(add_scalar(cabs(spectrum, 1e-12), 1.0))));
  return {add_scalar(gen_re.forward(feat), 1.0), gen_im.forward(feat)};
}

Tensor AffBlock::forward(const Tensor& x) const {
  Tensor h = pre.forward(x);
  ComplexTensor spec = fft2(h);
  ComplexTensor filtered = ifft2(cmul(hermitian_part(make_mask(spec)), spec));
  return add(x, post.forward(filtered.re));
}

double AffBlock::imaginary_residue(const Tensor& x, const ComplexTensor& mask) {
  NoGradGuard ng;
  auto im = ifft2(cmul(hermitian_part(mask), fft2(x))).im.to_vector();
  double m = 0.0;
  for (double v : im) m = std::max(m, std::abs(v));
  return m;
}

RefineUNet::RefineUNet(std::int64_t channels, int groups, Rng& rng)
    : conv_in(channels, channels, 3, rng),
      down(channels, channels, 3, rng, 2, 1),
      norm_mid(groups, channels),
      mid(channels, channels, 3, rng),
      up(channels, channels, 3, rng),
      norm_out(groups, channels),
      conv_out(channels, channels, 3, rng) {
  conv_out.zero_init();
  register_module("conv_in", conv_in);
  register_module("down", down);
  register_module("norm_mid", norm_mid);
  register_module("mid", mid);
  register_module("up", up);
  register_module("norm_out", norm_out);
  register_module("conv_out", conv_out);
}

Tensor RefineUNet::forward(const Tensor& x) const {
  Tensor skip = silu(conv_in.forward(x));
  Tensor h = mid.forward(silu(norm_mid.forward(down.forward(skip))));
  h = add(up.forward(upsample_nearest2x(h)), skip);
  return add(x, conv_out.forward(silu(norm_out.forward(h))));
}

Tensor focal_frequency_loss(const Tensor& real, const Tensor& fake, const FreqLossConfig& cfg) {
  if (real.shape() != fake.shape()) {
    throw TensorError("focal_frequency_loss: shapes " + shape_str(real.shape()) + " and " + shape_str(fake.shape()) +
                      " differ");
  }
  if (real.ndim() < 2) throw TensorError("focal_frequency_loss: need at least 2 dims, got " + shape_str(real.shape()));
  ComplexTensor fr = fft2(real), ff = fft2(fake);
  const double plane = static_cast<double>(real.dim(real.ndim() - 1) * real.dim(real.ndim() - 2));
  Tensor d2 = mul_scalar(cabs2(ComplexTensor{sub(fr.re, ff.re), sub(fr.im, ff.im)}), 1.0 / plane);

  // Spectrum weight per image (the last three axes, or the whole plane for 2-D input).
  Tensor weight;
  {
    NoGradGuard ng;
    auto v = d2.to_vector();
    const int img_axes = std::min(real.ndim(), 3);
    std::int64_t block = 1;
    for (int a = real.ndim() - img_axes; a < real.ndim(); ++a) block *= real.dim(a);
    std::vector<double> w(v.size());
    for (std::size_t start = 0; start < v.size(); start += static_cast<std::size_t>(block)) {
      double mx = 0.0;
      for (std::size_t k = start; k < start + static_cast<std::size_t>(block); ++k) {
        w[k] = std::pow(std::sqrt(v[k]), cfg.alpha);
        mx = std::max(mx, w[k]);
      }
      if (mx > 0.0)
        for (std::size_t k = start; k < start + static_cast<std::size_t>(block); ++k) w[k] /= mx;
    }
    weight = Tensor::from_values(d2.shape(), w, d2.dtype());
  }
  return mean(mul(d2, weight));
}

}  // namespace ssmoe::autoencoder
