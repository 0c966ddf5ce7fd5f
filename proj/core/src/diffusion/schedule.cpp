#include "ssmoe/diffusion/schedule.hpp"

#include <cmath>
#include <string>

#include "ssmoe/tensor/ops.hpp"

namespace ssmoe::diffusion {

namespace {

void require_t(int t, int T, const char* op) {
  if (t < 1 || t > T) {
    throw ScheduleError(std::string(op) + ": timestep " + std::to_string(t) + " outside 1.." + std::to_string(T));
  }
}

}  // namespace

double NoiseSchedule::alpha_at(int t) const {
  require_t(t, T, "alpha_at");
  return alpha[static_cast<std::size_t>(t)];
}

double NoiseSchedule::alpha_hat_at(int t) const {
  require_t(t, T, "alpha_hat_at");
  return alpha_hat[static_cast<std::size_t>(t)];
}

NoiseSchedule schedule_from_betas(const std::vector<double>& betas) {
  if (betas.empty()) throw ScheduleError("schedule: T must be at least 1");
  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  s.alpha.assign(betas.size() + 1, 1.0);
  s.alpha_hat.assign(betas.size() + 1, 1.0);
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] >= 0.0 && betas[i] < 1.0)) {
      throw ScheduleError("schedule: beta_" + std::to_string(i + 1) + " = " + std::to_string(betas[i]) +
                          " outside [0, 1)");
    }
    s.alpha[i + 1] = 1.0 - betas[i];
    s.alpha_hat[i + 1] = s.alpha_hat[i] * s.alpha[i + 1];
  }
  return s;
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw ScheduleError("make_schedule: T must be at least 1, got " + std::to_string(T));
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ScheduleError("make_schedule: need 0 < beta_start <= beta_end < 1, got " + std::to_string(beta_start) +
                        ", " + std::to_string(beta_end));
  }
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
  }
  return schedule_from_betas(betas);
}

Tensor forward_noise(const Tensor& y, int t, const Tensor& eps, const NoiseSchedule& s) {
  if (y.shape() != eps.shape()) {
    throw TensorError("forward_noise: y " + shape_str(y.shape()) + " and eps " + shape_str(eps.shape()) + " differ");
  }
  const double ah = s.alpha_hat_at(t);
  return add(mul_scalar(y, std::sqrt(ah)), mul_scalar(eps, std::sqrt(1.0 - ah)));
}

Tensor forward_noise_batch(const Tensor& y, const std::vector<int>& t, const Tensor& eps, const NoiseSchedule& s) {
  if (y.shape() != eps.shape()) {
    throw TensorError("forward_noise: y " + shape_str(y.shape()) + " and eps " + shape_str(eps.shape()) + " differ");
  }
  if (y.ndim() < 1 || static_cast<std::int64_t>(t.size()) != y.dim(0)) {
    throw TensorError("forward_noise: need one timestep per sample of " + shape_str(y.shape()));
  }
  Shape cs(static_cast<std::size_t>(y.ndim()), 1);
  cs[0] = y.dim(0);
  std::vector<double> a(t.size()), b(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double ah = s.alpha_hat_at(t[i]);
    a[i] = std::sqrt(ah);
    b[i] = std::sqrt(1.0 - ah);
  }
  return add(mul(y, Tensor::from_values(cs, a, y.dtype())), mul(eps, Tensor::from_values(cs, b, y.dtype())));
}

Tensor eps_loss(const Tensor& eps, const Tensor& eps_pred) {
  if (eps.shape() != eps_pred.shape()) {
    throw TensorError("eps_loss: eps " + shape_str(eps.shape()) + " and eps_pred " + shape_str(eps_pred.shape()) +
                      " differ");
  }
  return mean(square(sub(eps, eps_pred)));
}

Tensor reverse_step(const Tensor& y_t, const Tensor& eps_pred, double alpha_t, double alpha_hat_t,
                    const Tensor& noise) {
  if (y_t.shape() != eps_pred.shape()) {
    throw TensorError("denoise_step: y_t " + shape_str(y_t.shape()) + " and eps_pred " +
                      shape_str(eps_pred.shape()) + " differ");
  }
  const double one_minus_a = 1.0 - alpha_t;
  const double one_minus_ah = 1.0 - alpha_hat_t;
  double coef = 0.0;
  if (one_minus_a != 0.0) {
    if (one_minus_ah <= 0.0) {
      throw ScheduleError("denoise_step: alpha_hat_t == 1 with alpha_t < 1 (schedule misuse)");
    }
    coef = one_minus_a / std::sqrt(one_minus_ah);
  }
  NoGradGuard ng;
  Tensor mean_part = mul_scalar(sub(y_t, mul_scalar(eps_pred, coef)), 1.0 / std::sqrt(alpha_t));
  if (!noise.defined() || one_minus_a == 0.0) return mean_part;
  return add(mean_part, mul_scalar(noise, std::sqrt(one_minus_a)));
}

Tensor denoise_step(const Tensor& y_t, const Tensor& eps_pred, int t, const NoiseSchedule& s, Rng& rng) {
  require_t(t, s.T, "denoise_step");
  Tensor noise;
  if (t > 1) noise = randn(y_t.shape(), rng, y_t.dtype());
  return reverse_step(y_t, eps_pred, s.alpha_at(t), s.alpha_hat_at(t), noise);
}

SamplingPlan make_sampling_plan(const NoiseSchedule& s, int steps) {
  if (steps < 1 || steps > s.T) {
    throw ScheduleError("sampling plan: steps " + std::to_string(steps) + " outside 1.." + std::to_string(s.T));
  }
  SamplingPlan p;
  p.timesteps.resize(static_cast<std::size_t>(steps));
  p.alpha.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  p.alpha_hat.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  int prev = 0;
  for (int i = 1; i <= steps; ++i) {
    const int tau = static_cast<int>((static_cast<std::int64_t>(i) * s.T) / steps);
    p.timesteps[static_cast<std::size_t>(i - 1)] = tau;
    p.alpha_hat[static_cast<std::size_t>(i)] = s.alpha_hat[static_cast<std::size_t>(tau)];
    p.alpha[static_cast<std::size_t>(i)] =
        s.alpha_hat[static_cast<std::size_t>(tau)] / s.alpha_hat[static_cast<std::size_t>(prev)];
    prev = tau;
  }
  return p;
}

Tensor sample_chain(const SamplingPlan& plan, Tensor y_T, const EpsFn& eps_fn, Rng& rng) {
  NoGradGuard ng;
  Tensor y = std::move(y_T);
  for (int i = plan.steps(); i >= 1; --i) {
    const auto k = static_cast<std::size_t>(i);
    Tensor eps = eps_fn(y, plan.timesteps[k - 1]);
    Tensor noise;
    if (i > 1) noise = randn(y.shape(), rng, y.dtype());
    y = reverse_step(y, eps, plan.alpha[k], plan.alpha_hat[k], noise);
  }
  return y;
}

std::vector<StagePartition::Interval> StagePartition::intervals() const {
  std::vector<Interval> out;
  const int len = T / N;
  for (int k = 0; k < N; ++k) out.push_back({T - (k + 1) * len, T - k * len});
  return out;
}

StagePartition make_partition(int T, int N) {
  if (T < 1 || N < 1 || T % N != 0) {
    throw ScheduleError("stage partition: T=" + std::to_string(T) + " must be a positive multiple of N=" +
                        std::to_string(N));
  }
  return StagePartition{T, N};
}

int stage_of(int t, const StagePartition& p) {
  require_t(t, p.T, "stage_of");
  return (p.T - t) / (p.T / p.N);
}

}  // namespace ssmoe::diffusion
