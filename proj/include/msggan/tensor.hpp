#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace msggan {

enum class DType : std::uint8_t { F32, F64 };

const char* dtype_name(DType dt);
DType parse_dtype(const std::string& name);

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

// Invokes f.template operator()<T>() with T matching the runtime dtype.
template <class F>
decltype(auto) dispatch(DType dt, F&& f) {
  if (dt == DType::F32) return f.template operator()<float>();
  return f.template operator()<double>();
}

class Node;

using Storage = std::variant<std::vector<float>, std::vector<double>>;

// Dense row-major array with an optional link into the gradient graph.
//
// Tensors are handles: copying a Tensor shares its storage. Values are treated
// as immutable once a tensor participates in a graph; only leaf parameters are
// updated in place, and only between graph constructions.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dt = DType::F32);
  static Tensor full(Shape shape, double value, DType dt = DType::F32);
  static Tensor from_vector(Shape shape, std::span<const double> values, DType dt = DType::F32);
  static Tensor scalar(double value, DType dt = DType::F32);

  template <class T>
  static Tensor from_storage(Shape shape, std::vector<T> values) {
    return make_result(std::move(shape), std::make_shared<Storage>(std::move(values)), nullptr);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(shape().size()); }
  DType dtype() const;
  std::int64_t numel() const;

  double at(std::int64_t flat_index) const;
  double item() const;
  std::vector<double> to_vector() const;

  template <class T>
  std::span<const T> data() const;
  template <class T>
  std::span<T> mutable_data();

  bool requires_grad() const;
  // Only valid on leaves (tensors without a grad_fn).
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;
  const std::shared_ptr<Node>& grad_fn() const;

  // Shares storage but carries no graph linkage.
  Tensor detach() const;
  // Deep copy of values, detached.
  Tensor clone() const;
  Tensor to(DType dt) const;

  // Internal: the shared value buffer.
  const std::shared_ptr<Storage>& storage() const;

  // Identity of the underlying graph vertex.
  const void* id() const { return impl_.get(); }

  // Internal: wraps storage; a non-null grad_fn links the result into the graph.
  static Tensor make_result(Shape shape, std::shared_ptr<Storage> storage,
                            std::shared_ptr<Node> grad_fn);

 private:
  struct Impl;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  Impl& impl() const;

  std::shared_ptr<Impl> impl_;
};

// Vertex of the gradient graph: one per op result.
class Node {
 public:
  virtual ~Node() = default;
  // Returns one gradient per entry of inputs(); undefined tensors mean "no
  // gradient". Implementations express the backward pass through the public
  // differentiable ops so it can itself be recorded.
  virtual std::vector<Tensor> backward(const Tensor& grad_output) const = 0;
  virtual const char* name() const = 0;

  const std::vector<Tensor>& inputs() const { return inputs_; }

 protected:
  std::vector<Tensor> inputs_;
};

bool grad_mode_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class EnableGradGuard {
 public:
  explicit EnableGradGuard(bool enabled);
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace msggan
