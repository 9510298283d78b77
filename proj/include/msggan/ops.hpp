#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "msggan/tensor.hpp"

// Differentiable tensor operations and reverse-mode differentiation.
//
// Every backward rule is written in terms of the ops in this header, so a
// gradient computed with create_graph=true is itself differentiable. The set is
// closed under differentiation: conv2d / conv2d_input_grad / conv2d_weight_grad,
// broadcast_to / sum_to, avg_pool_2x2 / upsample_nearest_2x, slice / pad and
// gather / scatter_add are adjoint pairs of each other.
namespace msggan::ad {

// ---- elementwise, numpy-style broadcasting, dtypes must agree ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);

// ---- shape ----
Shape broadcast_shape(const Shape& a, const Shape& b);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
// Sums x down to `shape`, which must broadcast to x.shape().
Tensor sum_to(const Tensor& x, const Shape& shape);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, const Shape& shape);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x: N×F, weight: F×K, bias: K (may be undefined).
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);

// ---- convolution (cross-correlation, NCHW, weight O×I×kH×kW) ----
Shape conv2d_output_shape(const Shape& input, const Shape& weight, int stride, int padding);
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 1,
              int padding = 0);
// Adjoint of conv2d with respect to its input.
Tensor conv2d_input_grad(const Tensor& grad_output, const Tensor& weight, const Shape& input_shape,
                         int stride, int padding);
// Adjoint of conv2d with respect to its weight.
Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_output,
                          const Shape& weight_shape, int stride, int padding);
// Full transposed convolution of a 1×1 map with a 4×4 kernel, stride 1, no
// padding. latent: N×C×1×1, weight: C×O×4×4, bias: O. Result N×O×4×4.
Tensor conv_transpose_4x4(const Tensor& latent, const Tensor& weight, const Tensor& bias);

// ---- resampling and channel plumbing (rank-4 NCHW) ----
Tensor avg_pool_2x2(const Tensor& x);
Tensor upsample_nearest_2x(const Tensor& x);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t end);
// Embeds x at channel offset `begin` inside a zero tensor with `total` channels.
Tensor pad_channels(const Tensor& x, std::int64_t begin, std::int64_t total);

using IndexMap = std::shared_ptr<const std::vector<std::int64_t>>;
// out[i] = x[index[i]] (flat indices).
Tensor gather(const Tensor& x, const IndexMap& index, const Shape& out_shape);
// out[index[i]] += x[i] into a zero tensor of `out_shape`.
Tensor scatter_add(const Tensor& x, const IndexMap& index, const Shape& out_shape);
Tensor max_pool2d(const Tensor& x, int kernel, int stride, int padding);

// ---- activations ----
// Derivative at 0 is taken from the right (1).
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor relu(const Tensor& x);

// ---- normalization / statistics ----
// Appends one channel holding the mean over (C,H,W) of the per-position
// population standard deviation across the batch, sqrt(var + eps).
Tensor minibatch_stddev(const Tensor& x, double eps = 1e-8);

struct BatchNormStats {
  Tensor running_mean;  // C
  Tensor running_var;   // C
};
enum class NormMode { Train, Eval };
// Train mode normalizes by batch statistics and updates `stats` with the
// unbiased batch variance; eval mode uses the running statistics.
Tensor batch_norm_2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     BatchNormStats& stats, NormMode mode, double momentum = 0.1,
                     double eps = 1e-5);

// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
// Row-wise softmax, no graph recording.
Tensor softmax(const Tensor& logits);

// ---- differentiation ----
// Returns d objective / d wrt[i]. objective must be a scalar; every target
// must require grad and be reachable from the objective. With create_graph the
// returned gradients are linked into the graph and can be differentiated again.
// With allow_unused, unreachable targets get zero gradients instead of an error.
std::vector<Tensor> grad(const Tensor& objective, std::span<const Tensor> wrt,
                         bool create_graph = false, bool allow_unused = false);

}  // namespace msggan::ad
