#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "ssmoe/tensor/rng.hpp"
#include "ssmoe/tensor/tensor.hpp"

namespace ssmoe::diffusion {

class ScheduleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Per-step coefficients, 1-indexed: alpha[t] and alpha_hat[t] for t = 1..T.
/// Index 0 holds the empty product (alpha_hat[0] = 1).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha;
  std::vector<double> alpha_hat;

  double alpha_at(int t) const;
  double alpha_hat_at(int t) const;
};

/// Linear beta from beta_start to beta_end; alpha_t = 1 - beta_t.
NoiseSchedule make_schedule(int T, double beta_start, double beta_end);
/// Schedule from explicit betas (beta_1 .. beta_T), each in [0, 1).
NoiseSchedule schedule_from_betas(const std::vector<double>& betas);

/// sqrt(alpha_hat_t) * y + sqrt(1 - alpha_hat_t) * eps. Differentiable in y and eps.
Tensor forward_noise(const Tensor& y, int t, const Tensor& eps, const NoiseSchedule& s);

/// Per-sample forward noising of a batch y: [B, ...] at timesteps t[b].
Tensor forward_noise_batch(const Tensor& y, const std::vector<int>& t, const Tensor& eps, const NoiseSchedule& s);

/// Mean squared error between the injected and predicted noise.
Tensor eps_loss(const Tensor& eps, const Tensor& eps_pred);

/// One reverse step from coefficients (alpha_t, alpha_hat_t). `noise` may be
/// undefined, in which case no noise term is added.
Tensor reverse_step(const Tensor& y_t, const Tensor& eps_pred, double alpha_t, double alpha_hat_t,
                    const Tensor& noise);

/// Reverse step at timestep t; draws fresh noise from rng unless t == 1.
Tensor denoise_step(const Tensor& y_t, const Tensor& eps_pred, int t, const NoiseSchedule& s, Rng& rng);

/// Uniform subsampling of a T-step schedule to `steps` reverse steps.
/// timesteps[i-1] = tau_i = floor(i*T/steps); alpha[i] = alpha_hat[tau_i] / alpha_hat[tau_{i-1}].
struct SamplingPlan {
  std::vector<int> timesteps;
  std::vector<double> alpha;
  std::vector<double> alpha_hat;

  int steps() const { return static_cast<int>(timesteps.size()); }
};

SamplingPlan make_sampling_plan(const NoiseSchedule& s, int steps);

/// Predicts noise for `y` at original timestep `t`.
using EpsFn = std::function<Tensor(const Tensor& y, int t)>;

/// Runs the reverse chain from y_T through every step of `plan`, adding
/// noise on all but the final step.
Tensor sample_chain(const SamplingPlan& plan, Tensor y_T, const EpsFn& eps_fn, Rng& rng);

/// Uniform split of 1..T into N stages, highest noise first. Stage k covers
/// the half-open interval (hi - T/N, hi] with hi = T - k*T/N.
struct StagePartition {
  int T = 0;
  int N = 0;

  struct Interval {
    int lo_exclusive;
    int hi_inclusive;
  };
  std::vector<Interval> intervals() const;
};

StagePartition make_partition(int T, int N);
int stage_of(int t, const StagePartition& p);

}  // namespace ssmoe::diffusion
