#include "msggan/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace msggan {

Parameter::Parameter(std::string name_, Tensor value_, bool trainable_)
    : name(std::move(name_)), value(std::move(value_)), trainable(trainable_) {
  if (value.defined()) {
    value.set_requires_grad(trainable);
    grad = Tensor::zeros(value.shape(), value.dtype());
  }
}

void Parameter::set_trainable(bool flag) {
  trainable = flag;
  if (value.defined()) value.set_requires_grad(flag);
}

std::int64_t count_elements(const ParameterRefs& params) {
  std::int64_t n = 0;
  for (const auto* p : params) n += p->value.numel();
  return n;
}

ParameterRefs only_trainable(const ParameterRefs& params) {
  ParameterRefs out;
  for (auto* p : params) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

std::vector<Tensor> compute_gradients(const Tensor& objective, const ParameterRefs& params,
                                      bool create_graph) {
  std::vector<Tensor> targets;
  targets.reserve(params.size());
  for (const auto* p : params) targets.push_back(p->value);
  auto grads = ad::grad(objective, targets, create_graph);
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->grad = grads[i];
  return grads;
}

Tensor he_normal(const Shape& shape, std::int64_t fan_in, Rng& rng, DType dt) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.normal() * stddev;
  return Tensor::from_vector(shape, v, dt);
}

Conv2dLayer Conv2dLayer::create(const std::string& name, std::int64_t in, std::int64_t out,
                                int kernel, int stride, int padding, bool with_bias, Rng& rng,
                                DType dt, bool equalized_lr) {
  Conv2dLayer layer;
  const Shape shape{out, in, kernel, kernel};
  const std::int64_t fan_in = in * kernel * kernel;
  Tensor w;
  if (equalized_lr) {
    w = he_normal(shape, 2, rng, dt);  // std 1
    layer.runtime_scale = std::sqrt(2.0 / static_cast<double>(fan_in));
  } else {
    w = he_normal(shape, fan_in, rng, dt);
  }
  layer.weight = Parameter(name + "/weight", w);
  if (with_bias) layer.bias = Parameter(name + "/bias", Tensor::zeros({out}, dt));
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

Tensor Conv2dLayer::forward(const Tensor& x) const {
  const Tensor w = runtime_scale == 1.0 ? weight.value : ad::scale(weight.value, runtime_scale);
  return ad::conv2d(x, w, bias.value, stride, padding);
}

Shape Conv2dLayer::output_shape(const Shape& in) const {
  return ad::conv2d_output_shape(in, weight.shape(), stride, padding);
}

void Conv2dLayer::collect(ParameterRefs& out) {
  out.push_back(&weight);
  if (bias.value.defined()) out.push_back(&bias);
}

DenseLayer DenseLayer::create(const std::string& name, std::int64_t in, std::int64_t out,
                              Rng& rng, DType dt, bool equalized_lr) {
  DenseLayer layer;
  if (equalized_lr) {
    layer.weight = Parameter(name + "/weight", he_normal({in, out}, 2, rng, dt));
    layer.runtime_scale = std::sqrt(2.0 / static_cast<double>(in));
  } else {
    layer.weight = Parameter(name + "/weight", he_normal({in, out}, in, rng, dt));
  }
  layer.bias = Parameter(name + "/bias", Tensor::zeros({out}, dt));
  return layer;
}

Tensor DenseLayer::forward(const Tensor& x) const {
  const Tensor w = runtime_scale == 1.0 ? weight.value : ad::scale(weight.value, runtime_scale);
  return ad::dense(x, w, bias.value);
}

void DenseLayer::collect(ParameterRefs& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

}  // namespace msggan
