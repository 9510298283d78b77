#pragma once

#include <cstdint>
#include <span>

namespace msggan::kernels {

struct ConvDims {
  std::int64_t n, c, h, w;      // input
  std::int64_t o, kh, kw;       // weight
  std::int64_t oh, ow;          // output
  int stride, padding;

  std::int64_t patch() const { return c * kh * kw; }
  std::int64_t positions() const { return oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
};

// out (N×O×OH×OW) = conv(in, weight); out is overwritten.
template <class T>
void conv2d_forward(const ConvDims& d, std::span<const T> in, std::span<const T> weight,
                    std::span<T> out);

// grad_in (N×C×H×W) = adjoint of conv2d w.r.t. input; overwritten.
template <class T>
void conv2d_backward_input(const ConvDims& d, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_in);

// grad_w (O×C×kH×kW) = adjoint of conv2d w.r.t. weight; overwritten.
template <class T>
void conv2d_backward_weight(const ConvDims& d, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_w);

}  // namespace msggan::kernels
