#include "ssmoe/nn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ssmoe::nn {

Adam::Adam(std::vector<std::pair<std::string, Tensor*>> params, AdamConfig cfg) : cfg_(cfg) {
  for (auto& [name, p] : params) {
    if (!p->requires_grad()) continue;
    const auto n = static_cast<std::size_t>(p->numel());
    slots_.push_back({name, p, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0});
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.param->zero_grad();
}

void Adam::step() {
  double norm2 = 0.0;
  for (auto& s : slots_) {
    if (!s.param->has_grad()) continue;
    for (double g : s.param->grad().to_vector()) norm2 += g * g;
  }
  last_norm_ = std::sqrt(norm2);
  double scale = 1.0;
  if (cfg_.clip_norm > 0.0 && last_norm_ > cfg_.clip_norm) scale = cfg_.clip_norm / last_norm_;

  for (auto& s : slots_) {
    if (!s.param->has_grad()) continue;
    const std::vector<double> g = s.param->grad().to_vector();
    ++s.steps;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.steps));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.steps));
    dispatch(s.param->dtype(), [&]<class T>(T) {
      auto w = s.param->mutable_data<T>();
      for (std::size_t i = 0; i < w.size(); ++i) {
        double gi = g[i] * scale;
        if (cfg_.weight_decay != 0.0) gi += cfg_.weight_decay * static_cast<double>(w[i]);
        s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
        s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mh = s.m[i] / bc1;
        const double vh = s.v[i] / bc2;
        w[i] = static_cast<T>(static_cast<double>(w[i]) - cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    });
  }
}

StateDict Adam::state_dict() const {
  StateDict out;
  for (const auto& s : slots_) {
    const Shape shape = s.param->shape();
    out[s.name + ".m"] = Tensor::from_vector(shape, s.m);
    out[s.name + ".v"] = Tensor::from_vector(shape, s.v);
    out[s.name + ".steps"] = Tensor::scalar(static_cast<double>(s.steps), DType::f64);
  }
  return out;
}

void Adam::load_state_dict(const StateDict& state) {
  for (auto& s : slots_) {
    auto m = state.find(s.name + ".m"), v = state.find(s.name + ".v"), st = state.find(s.name + ".steps");
    if (m == state.end() || v == state.end() || st == state.end()) {
      throw std::runtime_error("adam: missing optimizer state for '" + s.name + "'");
    }
    if (m->second.numel() != s.param->numel() || v->second.numel() != s.param->numel()) {
      throw std::runtime_error("adam: state size mismatch for '" + s.name + "'");
    }
    s.m = m->second.to_vector();
    s.v = v->second.to_vector();
    s.steps = static_cast<std::int64_t>(st->second.item());
  }
}

}  // namespace ssmoe::nn
