#include "conv_kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

namespace msggan::kernels {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const RowMat<T>>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;

// col is patch() × positions(), row index (c, ky, kx), column index (oy, ox).
template <class T>
void im2col(const ConvDims& d, const T* img, T* col) {
  const auto positions = d.positions();
  for (std::int64_t c = 0; c < d.c; ++c) {
    for (std::int64_t ky = 0; ky < d.kh; ++ky) {
      for (std::int64_t kx = 0; kx < d.kw; ++kx) {
        T* row = col + ((c * d.kh + ky) * d.kw + kx) * positions;
        for (std::int64_t oy = 0; oy < d.oh; ++oy) {
          const std::int64_t iy = oy * d.stride - d.padding + ky;
          T* dst = row + oy * d.ow;
          if (iy < 0 || iy >= d.h) {
            std::fill(dst, dst + d.ow, T(0));
            continue;
          }
          const T* src = img + (c * d.h + iy) * d.w;
          for (std::int64_t ox = 0; ox < d.ow; ++ox) {
            const std::int64_t ix = ox * d.stride - d.padding + kx;
            dst[ox] = (ix < 0 || ix >= d.w) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

// Accumulates col back into img (which must be pre-zeroed).
template <class T>
void col2im(const ConvDims& d, const T* col, T* img) {
  const auto positions = d.positions();
  for (std::int64_t c = 0; c < d.c; ++c) {
    for (std::int64_t ky = 0; ky < d.kh; ++ky) {
      for (std::int64_t kx = 0; kx < d.kw; ++kx) {
        const T* row = col + ((c * d.kh + ky) * d.kw + kx) * positions;
        for (std::int64_t oy = 0; oy < d.oh; ++oy) {
          const std::int64_t iy = oy * d.stride - d.padding + ky;
          if (iy < 0 || iy >= d.h) continue;
          T* dst = img + (c * d.h + iy) * d.w;
          const T* src = row + oy * d.ow;
          for (std::int64_t ox = 0; ox < d.ow; ++ox) {
            const std::int64_t ix = ox * d.stride - d.padding + kx;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
void conv2d_forward(const ConvDims& d, std::span<const T> in, std::span<const T> weight,
                    std::span<T> out) {
  const auto K = d.patch();
  const auto P = d.positions();
  MapC<T> w(weight.data(), d.o, K);
  std::vector<T> col(d.pointwise() ? 0 : static_cast<std::size_t>(K * P));
  for (std::int64_t n = 0; n < d.n; ++n) {
    const T* img = in.data() + n * d.c * d.h * d.w;
    const T* cols = img;
    if (!d.pointwise()) {
      im2col(d, img, col.data());
      cols = col.data();
    }
    Map<T> y(out.data() + n * d.o * P, d.o, P);
    y.noalias() = w * MapC<T>(cols, K, P);
  }
}

template <class T>
void conv2d_backward_input(const ConvDims& d, std::span<const T> grad_out,
                           std::span<const T> weight, std::span<T> grad_in) {
  const auto K = d.patch();
  const auto P = d.positions();
  MapC<T> w(weight.data(), d.o, K);
  std::fill(grad_in.begin(), grad_in.end(), T(0));
  std::vector<T> col(d.pointwise() ? 0 : static_cast<std::size_t>(K * P));
  for (std::int64_t n = 0; n < d.n; ++n) {
    MapC<T> g(grad_out.data() + n * d.o * P, d.o, P);
    T* img = grad_in.data() + n * d.c * d.h * d.w;
    if (d.pointwise()) {
      Map<T>(img, K, P).noalias() = w.transpose() * g;
      continue;
    }
    Map<T>(col.data(), K, P).noalias() = w.transpose() * g;
    col2im(d, col.data(), img);
  }
}

template <class T>
void conv2d_backward_weight(const ConvDims& d, std::span<const T> in, std::span<const T> grad_out,
                            std::span<T> grad_w) {
  const auto K = d.patch();
  const auto P = d.positions();
  Map<T> gw(grad_w.data(), d.o, K);
  gw.setZero();
  std::vector<T> col(d.pointwise() ? 0 : static_cast<std::size_t>(K * P));
  for (std::int64_t n = 0; n < d.n; ++n) {
    const T* img = in.data() + n * d.c * d.h * d.w;
    const T* cols = img;
    if (!d.pointwise()) {
      im2col(d, img, col.data());
      cols = col.data();
    }
    MapC<T> g(grad_out.data() + n * d.o * P, d.o, P);
    gw.noalias() += g * MapC<T>(cols, K, P).transpose();
  }
}

template void conv2d_forward<float>(const ConvDims&, std::span<const float>,
                                    std::span<const float>, std::span<float>);
template void conv2d_forward<double>(const ConvDims&, std::span<const double>,
                                     std::span<const double>, std::span<double>);
template void conv2d_backward_input<float>(const ConvDims&, std::span<const float>,
                                           std::span<const float>, std::span<float>);
template void conv2d_backward_input<double>(const ConvDims&, std::span<const double>,
                                            std::span<const double>, std::span<double>);
template void conv2d_backward_weight<float>(const ConvDims&, std::span<const float>,
                                            std::span<const float>, std::span<float>);
template void conv2d_backward_weight<double>(const ConvDims&, std::span<const double>,
                                             std::span<const double>, std::span<double>);

}  // namespace msggan::kernels
