#include "ssmoe/tensor/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace ssmoe {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_node_seq{0};

// SSMOE_CHECK_NAN=1 forces the check on, =0 forces it off; debug builds
// check by default.
bool read_nan_env() {
  const char* v = std::getenv("SSMOE_CHECK_NAN");
  if (v == nullptr || v[0] == '\0') {
#ifdef NDEBUG
    return false;
#else
    return true;
#endif
  }
  return v[0] != '0';
}

void check_finite(const Tensor& t, const char* name) {
  dispatch(t.dtype(), [&]<class T>(T) {
    for (T v : t.data<T>()) {
      if (!std::isfinite(v)) {
        throw TensorError(std::string(name) + ": produced non-finite value");
      }
    }
  });
}

void add_into(Storage& dst, const Storage& src) {
  dispatch(dst.dtype(), [&]<class T>(T) {
    auto d = dst.span<T>();
    auto s = src.span<T>();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
  });
}

std::shared_ptr<Storage> copy_storage(const Storage& src) {
  return dispatch(src.dtype(), [&]<class T>(T) {
    auto s = src.span<T>();
    return std::make_shared<Storage>(std::vector<T>(s.begin(), s.end()));
  });
}

}  // namespace

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw TensorError("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

Storage::Storage(std::size_t n, DType dt) {
  if (dt == DType::f32) {
    data_ = std::vector<float>(n, 0.0f);
  } else {
    data_ = std::vector<double>(n, 0.0);
  }
}

std::size_t Storage::size() const {
  return std::visit([](const auto& v) { return v.size(); }, data_);
}

Tensor Tensor::empty(Shape shape, DType dt) {
  auto impl = std::make_shared<TensorImpl>();
  const auto n = static_cast<std::size_t>(numel_of(shape));
  impl->shape = std::move(shape);
  impl->data = std::make_shared<Storage>(n, dt);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, DType dt) { return empty(std::move(shape), dt); }

Tensor Tensor::full(Shape shape, double value, DType dt) {
  Tensor t = empty(std::move(shape), dt);
  dispatch(dt, [&]<class T>(T) {
    auto d = t.mutable_data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::scalar(double value, DType dt) { return full({}, value, dt); }

Tensor Tensor::from_vector(Shape shape, std::vector<float> values) {
  if (numel_of(shape) != static_cast<std::int64_t>(values.size())) {
    throw TensorError("from_vector: " + std::to_string(values.size()) +
                      " values do not fill shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::make_shared<Storage>(std::move(values));
  return Tensor(std::move(impl));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values) {
  if (numel_of(shape) != static_cast<std::int64_t>(values.size())) {
    throw TensorError("from_vector: " + std::to_string(values.size()) +
                      " values do not fill shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::make_shared<Storage>(std::move(values));
  return Tensor(std::move(impl));
}

Tensor Tensor::from_values(Shape shape, const std::vector<double>& values, DType dt) {
  if (dt == DType::f64) return from_vector(std::move(shape), values);
  return from_vector(std::move(shape), std::vector<float>(values.begin(), values.end()));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw TensorError("shape: undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  const int n = static_cast<int>(s.size());
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) {
    throw TensorError("dim: axis out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data->size()); }

DType Tensor::dtype() const {
  if (!impl_) throw TensorError("dtype: undefined tensor");
  return impl_->data->dtype();
}

double Tensor::item() const {
  if (numel() != 1) throw TensorError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return at(0);
}

double Tensor::at(std::int64_t i) const {
  return dispatch(dtype(), [&]<class T>(T) { return static_cast<double>(data<T>()[static_cast<std::size_t>(i)]); });
}

std::vector<double> Tensor::to_vector() const {
  return dispatch(dtype(), [&]<class T>(T) {
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (impl_->grad_fn) throw TensorError("set_requires_grad: only leaves can be marked");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return impl_->grad_fn == nullptr; }

Tensor Tensor::grad() const {
  if (!impl_ || !impl_->grad) return {};
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->grad;
  return Tensor(std::move(impl));
}

bool Tensor::has_grad() const { return impl_ && impl_->grad != nullptr; }

void Tensor::zero_grad() { impl_->grad.reset(); }

void Tensor::set_grad(const Tensor& g) {
  if (!g.defined()) {
    impl_->grad.reset();
    return;
  }
  if (g.shape() != shape() || g.dtype() != dtype()) {
    throw TensorError("set_grad: gradient " + shape_str(g.shape()) + " does not match " + shape_str(shape()));
  }
  impl_->grad = copy_storage(*g.impl_->data);
}

const std::shared_ptr<Node>& Tensor::grad_fn() const { return impl_->grad_fn; }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = copy_storage(*impl_->data);
  return Tensor(std::move(impl));
}

Tensor Tensor::to(DType dt) const {
  if (dt == dtype()) return clone();
  std::vector<double> v = to_vector();
  return from_values(shape(), v, dt);
}

void Tensor::copy_from(const Tensor& src) {
  if (impl_->grad_fn) throw TensorError("copy_from: tensor has history");
  if (src.shape() != shape()) {
    throw TensorError("copy_from: shape " + shape_str(src.shape()) + " vs " + shape_str(shape()));
  }
  dispatch(dtype(), [&]<class T>(T) {
    auto d = mutable_data<T>();
    if (src.dtype() == dtype()) {
      auto s = src.data<T>();
      std::copy(s.begin(), s.end(), d.begin());
    } else {
      auto v = src.to_vector();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(v[i]);
    }
  });
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw TensorError("backward: implicit seed needs a scalar, got shape " + shape_str(shape()));
  }
  backward(Tensor::full(shape(), 1.0, dtype()));
}

void Tensor::backward(const Tensor& seed) const {
  if (seed.shape() != shape()) {
    throw TensorError("backward: seed shape " + shape_str(seed.shape()) + " vs " + shape_str(shape()));
  }
  if (!requires_grad()) throw TensorError("backward: tensor does not require grad");
  NoGradGuard guard;

  // Collect every interior node reachable from this output.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<TensorImpl*> stack{impl_.get()};
  while (!stack.empty()) {
    TensorImpl* cur = stack.back();
    stack.pop_back();
    if (!cur->grad_fn || !seen.insert(cur).second) continue;
    order.push_back(cur);
    for (const auto& in : cur->grad_fn->inputs) {
      if (in.defined() && in.impl_->requires_grad) stack.push_back(in.impl_.get());
    }
  }
  // Creation order is a valid topological order; walk it backwards.
  std::sort(order.begin(), order.end(),
            [](TensorImpl* a, TensorImpl* b) { return a->grad_fn->seq > b->grad_fn->seq; });

  std::unordered_map<TensorImpl*, std::shared_ptr<Storage>> pending;
  auto accumulate = [&](const std::shared_ptr<TensorImpl>& target, const Tensor& g) {
    if (!target->requires_grad || !g.defined()) return;
    if (g.impl_->shape != target->shape) {
      throw TensorError("backward: gradient shape " + shape_str(g.impl_->shape) + " for tensor " +
                        shape_str(target->shape));
    }
    if (target->grad_fn) {
      auto& slot = pending[target.get()];
      if (!slot) {
        slot = copy_storage(*g.impl_->data);
      } else {
        add_into(*slot, *g.impl_->data);
      }
    } else if (!target->grad) {
      target->grad = copy_storage(*g.impl_->data);
    } else {
      add_into(*target->grad, *g.impl_->data);
    }
  };

  if (impl_->grad_fn) {
    pending[impl_.get()] = copy_storage(*seed.impl_->data);
  } else {
    accumulate(impl_, seed);
    return;
  }

  for (TensorImpl* cur : order) {
    auto it = pending.find(cur);
    if (it == pending.end()) continue;
    auto gimpl = std::make_shared<TensorImpl>();
    gimpl->shape = cur->shape;
    gimpl->data = std::move(it->second);
    pending.erase(it);
    Tensor g(std::move(gimpl));
    const Node& node = *cur->grad_fn;
    std::vector<Tensor> grads = node.backward(g);
    if (grads.size() != node.inputs.size()) {
      throw TensorError(std::string("backward: op ") + node.name + " returned wrong gradient count");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (node.inputs[i].defined()) accumulate(node.inputs[i].impl_, grads[i]);
    }
  }
}

Tensor make_op_result(Tensor out, const char* name, std::vector<Tensor> inputs, BackwardFn fn) {
  if (nan_check_enabled()) check_finite(out, name);
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return out;
  auto node = std::make_shared<Node>();
  node->seq = g_node_seq.fetch_add(1, std::memory_order_relaxed);
  node->name = name;
  node->inputs = std::move(inputs);
  node->backward = std::move(fn);
  out.impl_->grad_fn = std::move(node);
  out.impl_->requires_grad = true;
  return out;
}

Tensor alias_with_shape(const Tensor& src, Shape shape) {
  if (numel_of(shape) != src.numel()) {
    throw TensorError("reshape: cannot view " + shape_str(src.shape()) + " as " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = src.impl_->data;
  return Tensor(std::move(impl));
}

bool grad_enabled() { return g_grad_enabled; }

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : ts) {
    if (t && t->requires_grad()) return true;
  }
  return false;
}

bool nan_check_enabled() {
  static const bool enabled = read_nan_env();
  return enabled;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

}  // namespace ssmoe
