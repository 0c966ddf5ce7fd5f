#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace ssmoe {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);
const char* dtype_name(DType dt);

/// Error raised by tensor ops on shape or argument violations. The message
/// always names the op.
class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Contiguous row-major buffer of either f32 or f64 values.
class Storage {
 public:
  Storage(std::size_t n, DType dt);
  explicit Storage(std::vector<float> v) : data_(std::move(v)) {}
  explicit Storage(std::vector<double> v) : data_(std::move(v)) {}

  DType dtype() const { return data_.index() == 0 ? DType::f32 : DType::f64; }
  std::size_t size() const;

  template <class T>
  std::span<T> span() {
    return std::span<T>(std::get<std::vector<T>>(data_));
  }
  template <class T>
  std::span<const T> span() const {
    return std::span<const T>(std::get<std::vector<T>>(data_));
  }

 private:
  std::variant<std::vector<float>, std::vector<double>> data_;
};

class Tensor;
struct TensorImpl;

/// Backward closure of a recorded op: receives the gradient of the op's
/// output and returns one gradient per input (undefined where not needed).
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

struct Node {
  std::uint64_t seq = 0;
  const char* name = "";
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::shared_ptr<Storage> data;
  std::shared_ptr<Storage> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

/// Dense n-dimensional array with optional participation in reverse-mode
/// differentiation. Copies are shallow: two Tensor handles may alias one
/// buffer. Ops never mutate their inputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor empty(Shape shape, DType dt = DType::f32);
  static Tensor zeros(Shape shape, DType dt = DType::f32);
  static Tensor full(Shape shape, double value, DType dt = DType::f32);
  static Tensor scalar(double value, DType dt = DType::f32);
  static Tensor from_vector(Shape shape, std::vector<float> values);
  static Tensor from_vector(Shape shape, std::vector<double> values);
  static Tensor from_values(Shape shape, const std::vector<double>& values, DType dt);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int ndim() const { return static_cast<int>(shape().size()); }
  std::int64_t numel() const;
  DType dtype() const;

  template <class T>
  std::span<const T> data() const {
    return std::as_const(*impl_->data).template span<T>();
  }
  /// Mutable access is for kernels filling freshly created outputs and for
  /// optimizers updating leaves in place.
  template <class T>
  std::span<T> mutable_data() {
    return impl_->data->template span<T>();
  }

  double item() const;
  double at(std::int64_t flat_index) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;
  Tensor grad() const;
  bool has_grad() const;
  void zero_grad();
  void set_grad(const Tensor& g);

  /// Runs reverse-mode accumulation from this scalar into every reachable
  /// leaf that requires grad.
  void backward() const;
  /// Same, seeded with an explicit output gradient of matching shape.
  void backward(const Tensor& seed) const;

  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dt) const;

  /// Overwrites values in place. Only legal on tensors without history.
  void copy_from(const Tensor& src);

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<Node>& grad_fn() const;

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_op_result(Tensor out, const char* name, std::vector<Tensor> inputs,
                               BackwardFn fn);
  friend Tensor alias_with_shape(const Tensor& src, Shape shape);
};

/// Attaches history to `out` when grad mode is on and any input requires
/// grad; otherwise returns `out` unchanged.
Tensor make_op_result(Tensor out, const char* name, std::vector<Tensor> inputs, BackwardFn fn);

/// New handle sharing `src`'s buffer under a different shape (no history).
Tensor alias_with_shape(const Tensor& src, Shape shape);

bool grad_enabled();
bool any_requires_grad(std::initializer_list<const Tensor*> ts);
bool nan_check_enabled();

/// Disables history recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Invokes `f(T{})` with T = float or double according to `dt`.
template <class F>
decltype(auto) dispatch(DType dt, F&& f) {
  if (dt == DType::f32) return f(float{});
  return f(double{});
}

}  // namespace ssmoe
