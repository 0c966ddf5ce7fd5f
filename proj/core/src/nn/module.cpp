#include "ssmoe/nn/module.hpp"

#include <stdexcept>

namespace ssmoe::nn {

namespace {

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace

Tensor& Module::register_parameter(const std::string& name, Tensor& slot, Tensor value, bool requires_grad) {
  slot = std::move(value);
  slot.set_requires_grad(requires_grad);
  params_.emplace_back(name, &slot);
  return slot;
}

void Module::register_module(const std::string& name, Module& child) { children_.emplace_back(name, &child); }

void Module::unregister_module(const std::string& name) {
  std::erase_if(children_, [&](const auto& c) { return c.first == name; });
}

std::vector<std::pair<std::string, Tensor*>> Module::named_parameters(const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (const auto& [name, p] : params_) out.emplace_back(join(prefix, name), p);
  for (const auto& [name, child] : children_) {
    auto sub = child->named_parameters(join(prefix, name));
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

std::vector<Tensor*> Module::parameters() const {
  std::vector<Tensor*> out;
  for (auto& [_, p] : named_parameters()) out.push_back(p);
  return out;
}

std::int64_t Module::parameter_count() const {
  std::int64_t n = 0;
  for (auto* p : parameters()) n += p->numel();
  return n;
}

void Module::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

void Module::set_requires_grad(bool flag) {
  for (auto* p : parameters()) p->set_requires_grad(flag);
}

void Module::to(DType dt) {
  for (auto* p : parameters()) {
    if (p->dtype() == dt) continue;
    const bool rg = p->requires_grad();
    *p = p->to(dt);
    p->set_requires_grad(rg);
  }
}

StateDict Module::state_dict(const std::string& prefix) const {
  StateDict out;
  for (auto& [name, p] : named_parameters(prefix)) out[name] = p->detach().clone();
  return out;
}

void Module::load_state_dict(const StateDict& state, const std::string& prefix, bool strict) {
  for (auto& [name, p] : named_parameters(prefix)) {
    auto it = state.find(name);
    if (it == state.end()) {
      if (strict) throw std::runtime_error("load_state_dict: missing entry '" + name + "'");
      continue;
    }
    if (it->second.shape() != p->shape()) {
      throw std::runtime_error("load_state_dict: '" + name + "' has shape " + shape_str(it->second.shape()) +
                               ", expected " + shape_str(p->shape()));
    }
    p->copy_from(it->second.to(p->dtype()));
  }
}

void Module::copy_parameters_from(const Module& other) {
  auto mine = named_parameters();
  auto theirs = other.named_parameters();
  if (mine.size() != theirs.size()) throw std::runtime_error("copy_parameters_from: structure mismatch");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].second->shape() != theirs[i].second->shape()) {
      throw std::runtime_error("copy_parameters_from: shape mismatch at '" + mine[i].first + "'");
    }
    mine[i].second->copy_from(theirs[i].second->to(mine[i].second->dtype()));
  }
}

}  // namespace ssmoe::nn
