#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msggan/ops.hpp"
#include "msggan/rng.hpp"
#include "msggan/tensor.hpp"

namespace msggan {

// A trainable array. `value` is a graph leaf; it requires grad exactly when
// the parameter is trainable, so frozen parameters never enter a backward pass.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string name, Tensor value, bool trainable = true);

  void set_trainable(bool flag);
  const Shape& shape() const { return value.shape(); }
};

using ParameterRefs = std::vector<Parameter*>;

std::int64_t count_elements(const ParameterRefs& params);
ParameterRefs only_trainable(const ParameterRefs& params);

// Differentiates `objective` w.r.t. each parameter, stores the result in
// Parameter::grad and returns the gradients in order.
std::vector<Tensor> compute_gradients(const Tensor& objective, const ParameterRefs& params,
                                      bool create_graph = false);

// He (fan-in) scaled normal initialisation.
Tensor he_normal(const Shape& shape, std::int64_t fan_in, Rng& rng, DType dt);

struct Conv2dLayer {
  Parameter weight;  // O×I×k×k
  Parameter bias;    // O, undefined value when the layer has no bias
  int stride = 1;
  int padding = 0;
  // Equalized learning rate: weights are N(0,1) and scaled at run time.
  double runtime_scale = 1.0;

  static Conv2dLayer create(const std::string& name, std::int64_t in, std::int64_t out,
                            int kernel, int stride, int padding, bool with_bias, Rng& rng,
                            DType dt, bool equalized_lr = false);

  Tensor forward(const Tensor& x) const;
  Shape output_shape(const Shape& in) const;
  void collect(ParameterRefs& out);
};

struct DenseLayer {
  Parameter weight;  // F×K
  Parameter bias;    // K
  double runtime_scale = 1.0;

  static DenseLayer create(const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                           DType dt, bool equalized_lr = false);

  Tensor forward(const Tensor& x) const;
  void collect(ParameterRefs& out);
};

}  // namespace msggan
