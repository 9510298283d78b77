#include "msggan/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace msggan {

const char* dtype_name(DType dt) { return dt == DType::F32 ? "fp32" : "fp64"; }

DType parse_dtype(const std::string& name) {
  if (name == "fp32" || name == "f32" || name == "float32") return DType::F32;
  if (name == "fp64" || name == "f64" || name == "float64") return DType::F64;
  throw std::invalid_argument("unknown dtype '" + name + "'");
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  return os.str();
}

struct Tensor::Impl {
  Shape shape;
  std::shared_ptr<Storage> storage;
  std::shared_ptr<Node> grad_fn;
  bool requires_grad = false;

  DType dtype() const { return storage->index() == 0 ? DType::F32 : DType::F64; }
};

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_str(shape));
  }
}

std::shared_ptr<Storage> make_storage(std::int64_t n, DType dt, double value) {
  if (dt == DType::F32) {
    return std::make_shared<Storage>(std::vector<float>(static_cast<std::size_t>(n),
                                                        static_cast<float>(value)));
  }
  return std::make_shared<Storage>(std::vector<double>(static_cast<std::size_t>(n), value));
}

}  // namespace

bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

EnableGradGuard::EnableGradGuard(bool enabled) : previous_(g_grad_enabled) {
  g_grad_enabled = enabled;
}
EnableGradGuard::~EnableGradGuard() { g_grad_enabled = previous_; }

Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return *impl_;
}

Tensor Tensor::make_result(Shape shape, std::shared_ptr<Storage> storage,
                           std::shared_ptr<Node> grad_fn) {
  check_shape(shape);
  const auto n = shape_numel(shape);
  const auto len = std::visit([](const auto& v) { return static_cast<std::int64_t>(v.size()); },
                              *storage);
  if (n != len) {
    throw std::invalid_argument("shape " + shape_str(shape) + " does not match " +
                                std::to_string(len) + " values");
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->storage = std::move(storage);
  impl->requires_grad = grad_fn != nullptr;
  impl->grad_fn = std::move(grad_fn);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, DType dt) { return full(std::move(shape), 0.0, dt); }

Tensor Tensor::full(Shape shape, double value, DType dt) {
  check_shape(shape);
  auto storage = make_storage(shape_numel(shape), dt, value);
  return make_result(std::move(shape), std::move(storage), nullptr);
}

Tensor Tensor::from_vector(Shape shape, std::span<const double> values, DType dt) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw std::invalid_argument("shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
  if (dt == DType::F32) {
    std::vector<float> v(values.begin(), values.end());
    return from_storage(std::move(shape), std::move(v));
  }
  return from_storage(std::move(shape), std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::scalar(double value, DType dt) { return full({}, value, dt); }

const Shape& Tensor::shape() const { return impl().shape; }

std::int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw std::out_of_range("axis out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

DType Tensor::dtype() const { return impl().dtype(); }

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

double Tensor::at(std::int64_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v.at(static_cast<std::size_t>(i))); },
                    *impl().storage);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  }
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); },
                    *impl().storage);
}

template <class T>
std::span<const T> Tensor::data() const {
  auto* v = std::get_if<std::vector<T>>(impl().storage.get());
  if (!v) throw std::invalid_argument("tensor dtype mismatch: stored as " +
                                      std::string(dtype_name(dtype())));
  return {v->data(), v->size()};
}

template <class T>
std::span<T> Tensor::mutable_data() {
  auto* v = std::get_if<std::vector<T>>(impl().storage.get());
  if (!v) throw std::invalid_argument("tensor dtype mismatch: stored as " +
                                      std::string(dtype_name(dtype())));
  return {v->data(), v->size()};
}

template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;
template std::span<float> Tensor::mutable_data<float>();
template std::span<double> Tensor::mutable_data<double>();

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (impl().grad_fn) throw std::logic_error("set_requires_grad on a non-leaf tensor");
  impl().requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return impl().grad_fn == nullptr; }

const std::shared_ptr<Node>& Tensor::grad_fn() const { return impl().grad_fn; }

const std::shared_ptr<Storage>& Tensor::storage() const { return impl().storage; }

Tensor Tensor::detach() const { return make_result(shape(), impl().storage, nullptr); }

Tensor Tensor::clone() const {
  return make_result(shape(), std::make_shared<Storage>(*impl().storage), nullptr);
}

Tensor Tensor::to(DType dt) const {
  if (dt == dtype()) return clone();
  return std::visit(
      [&](const auto& v) -> Tensor {
        if (dt == DType::F32) return from_storage(shape(), std::vector<float>(v.begin(), v.end()));
        return from_storage(shape(), std::vector<double>(v.begin(), v.end()));
      },
      *impl().storage);
}

}  // namespace msggan
