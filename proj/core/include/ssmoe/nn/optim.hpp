#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "ssmoe/nn/module.hpp"

namespace ssmoe::nn {

/// Raised by training loops on unrecoverable numeric failure (non-finite loss).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

/// Adam with per-parameter step counts: a parameter without a gradient in a
/// step is left untouched, including its moment estimates.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor*>> params, AdamConfig cfg);

  void step();
  void zero_grad();

  AdamConfig& config() { return cfg_; }
  /// Global L2 norm of the gradients seen by the last step (before clipping).
  double last_grad_norm() const { return last_norm_; }

  StateDict state_dict() const;
  void load_state_dict(const StateDict& state);

 private:
  struct Slot {
    std::string name;
    Tensor* param;
    std::vector<double> m, v;
    std::int64_t steps = 0;
  };
  std::vector<Slot> slots_;
  AdamConfig cfg_;
  double last_norm_ = 0.0;
};

}  // namespace ssmoe::nn
