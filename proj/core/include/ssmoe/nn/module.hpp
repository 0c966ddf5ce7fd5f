#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ssmoe/tensor/tensor.hpp"

namespace ssmoe::nn {

using StateDict = std::map<std::string, Tensor>;

/// Base for layers and models. Parameters and children are registered by
/// address, so modules are neither copyable nor movable.
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  /// Parameters in registration order, depth first, with dotted names.
  std::vector<std::pair<std::string, Tensor*>> named_parameters(const std::string& prefix = "") const;
  std::vector<Tensor*> parameters() const;
  std::int64_t parameter_count() const;

  void zero_grad();
  void set_requires_grad(bool flag);
  /// Converts every parameter to `dt` (detached leaves keep their grad flag).
  void to(DType dt);

  StateDict state_dict(const std::string& prefix = "") const;
  /// Copies matching entries; throws on missing keys or shape mismatch when strict.
  void load_state_dict(const StateDict& state, const std::string& prefix = "", bool strict = true);

  /// Copies every parameter value from a module of identical structure.
  void copy_parameters_from(const Module& other);

 protected:
  Tensor& register_parameter(const std::string& name, Tensor& slot, Tensor value, bool requires_grad = true);
  void register_module(const std::string& name, Module& child);
  void unregister_module(const std::string& name);

 private:
  std::vector<std::pair<std::string, Tensor*>> params_;
  std::vector<std::pair<std::string, Module*>> children_;
};

}  // namespace ssmoe::nn
