#include "msggan/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "conv_kernels.hpp"

namespace msggan::ad {

namespace {

class FnNode final : public Node {
 public:
  using Fn = std::function<std::vector<Tensor>(const Tensor&)>;

  FnNode(const char* name, std::vector<Tensor> inputs, Fn fn) : name_(name), fn_(std::move(fn)) {
    inputs_ = std::move(inputs);
  }

  std::vector<Tensor> backward(const Tensor& grad_output) const override {
    return fn_(grad_output);
  }
  const char* name() const override { return name_; }

 private:
  const char* name_;
  Fn fn_;
};

Tensor record(Shape shape, std::shared_ptr<Storage> storage, const char* name,
              std::vector<Tensor> inputs, FnNode::Fn fn) {
  bool needed = false;
  if (grad_mode_enabled()) {
    for (const auto& t : inputs) needed = needed || (t.defined() && t.requires_grad());
  }
  std::shared_ptr<Node> node;
  if (needed) node = std::make_shared<FnNode>(name, std::move(inputs), std::move(fn));
  return Tensor::make_result(std::move(shape), std::move(storage), std::move(node));
}

bool wants(const Tensor& t) { return t.defined() && t.requires_grad(); }

template <class T>
std::shared_ptr<Storage> make_buffer(std::int64_t n) {
  return std::make_shared<Storage>(std::vector<T>(static_cast<std::size_t>(n)));
}

template <class T>
std::span<T> span_of(Storage& s) {
  auto& v = std::get<std::vector<T>>(s);
  return {v.data(), v.size()};
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw std::invalid_argument(std::string(op) + ": dtype mismatch (" + dtype_name(a.dtype()) +
                                " vs " + dtype_name(b.dtype()) + ")");
  }
}

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_str(t.shape()));
  }
}

template <class F>
std::shared_ptr<Storage> map_unary(const Tensor& x, F f) {
  return dispatch(x.dtype(), [&]<class T>() {
    auto in = x.data<T>();
    auto out = make_buffer<T>(x.numel());
    auto dst = span_of<T>(*out);
    for (std::size_t i = 0; i < in.size(); ++i) dst[i] = static_cast<T>(f(in[i]));
    return out;
  });
}

template <class F>
std::shared_ptr<Storage> map_binary(const Tensor& a, const Tensor& b, F f) {
  return dispatch(a.dtype(), [&]<class T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto out = make_buffer<T>(a.numel());
    auto dst = span_of<T>(*out);
    for (std::size_t i = 0; i < x.size(); ++i) dst[i] = static_cast<T>(f(x[i], y[i]));
    return out;
  });
}

Shape pad_leading(const Shape& s, std::size_t rank) {
  Shape out(rank - s.size(), 1);
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

// Strides of `small` (already padded to big's rank) with zero on broadcast axes.
std::vector<std::int64_t> broadcast_strides(const Shape& small, const Shape& big) {
  std::vector<std::int64_t> strides(small.size(), 0);
  std::int64_t s = 1;
  for (std::size_t i = small.size(); i-- > 0;) {
    strides[i] = (small[i] == 1 && big[i] != 1) ? 0 : s;
    s *= small[i];
  }
  return strides;
}

// Walks every flat index of `big` and reports the matching index into `small`.
template <class F>
void for_each_broadcast(const Shape& small, const Shape& big, F f) {
  const auto strides = broadcast_strides(small, big);
  const auto total = shape_numel(big);
  const auto rank = big.size();
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t s = 0;
  for (std::int64_t o = 0; o < total; ++o) {
    f(o, s);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      s += strides[ax];
      if (idx[ax] < big[ax]) break;
      s -= strides[ax] * big[ax];
      idx[ax] = 0;
    }
  }
}

Tensor add_same(const Tensor& a, const Tensor& b);
Tensor sub_same(const Tensor& a, const Tensor& b);
Tensor mul_same(const Tensor& a, const Tensor& b);
Tensor div_same(const Tensor& a, const Tensor& b);

template <class Same>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* op, Same same) {
  require_same_dtype(a, b, op);
  const Shape s = broadcast_shape(a.shape(), b.shape());
  const Tensor a2 = a.shape() == s ? a : broadcast_to(a, s);
  const Tensor b2 = b.shape() == s ? b : broadcast_to(b, s);
  return same(a2, b2);
}

Tensor add_same(const Tensor& a, const Tensor& b) {
  auto st = map_binary(a, b, [](auto x, auto y) { return x + y; });
  return record(a.shape(), st, "add", {a, b}, [a, b](const Tensor& g) {
    return std::vector<Tensor>{wants(a) ? g : Tensor(), wants(b) ? g : Tensor()};
  });
}

Tensor sub_same(const Tensor& a, const Tensor& b) {
  auto st = map_binary(a, b, [](auto x, auto y) { return x - y; });
  return record(a.shape(), st, "sub", {a, b}, [a, b](const Tensor& g) {
    return std::vector<Tensor>{wants(a) ? g : Tensor(), wants(b) ? neg(g) : Tensor()};
  });
}

Tensor mul_same(const Tensor& a, const Tensor& b) {
  auto st = map_binary(a, b, [](auto x, auto y) { return x * y; });
  return record(a.shape(), st, "mul", {a, b}, [a, b](const Tensor& g) {
    return std::vector<Tensor>{wants(a) ? mul(g, b) : Tensor(), wants(b) ? mul(g, a) : Tensor()};
  });
}

Tensor div_same(const Tensor& a, const Tensor& b) {
  auto st = map_binary(a, b, [](auto x, auto y) { return x / y; });
  return record(a.shape(), st, "div", {a, b}, [a, b](const Tensor& g) {
    Tensor ga, gb;
    if (wants(a)) ga = div(g, b);
    if (wants(b)) gb = neg(div(mul(g, a), mul(b, b)));
    return std::vector<Tensor>{ga, gb};
  });
}

// Constant multiplicative mask; backward multiplies by the same mask.
Tensor masked(const Tensor& x, const Tensor& mask, const char* name) {
  auto st = map_binary(x, mask, [](auto v, auto m) { return v * m; });
  return record(x.shape(), st, name, {x},
                [mask](const Tensor& g) { return std::vector<Tensor>{mul(g, mask)}; });
}

struct ChannelView {
  std::int64_t outer, channels, inner;
};

ChannelView channel_view(const Tensor& x, const char* op) {
  if (x.rank() < 2) {
    throw std::invalid_argument(std::string(op) + ": need rank >= 2, got " +
                                shape_str(x.shape()));
  }
  std::int64_t inner = 1;
  for (int i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  return {x.dim(0), x.dim(1), inner};
}

kernels::ConvDims conv_dims(const Shape& in, const Shape& w, int stride, int padding) {
  const auto out = conv2d_output_shape(in, w, stride, padding);
  return {in[0], in[1], in[2], in[3], w[0], w[2], w[3], out[2], out[3], stride, padding};
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) { return broadcast_binary(a, b, "add", add_same); }
Tensor sub(const Tensor& a, const Tensor& b) { return broadcast_binary(a, b, "sub", sub_same); }
Tensor mul(const Tensor& a, const Tensor& b) { return broadcast_binary(a, b, "mul", mul_same); }
Tensor div(const Tensor& a, const Tensor& b) { return broadcast_binary(a, b, "div", div_same); }

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
  auto st = dispatch(x.dtype(), [&]<class T>() {
    const T f = static_cast<T>(factor);
    return map_unary(x, [f](T v) { return v * f; });
  });
  return record(x.shape(), st, "scale", {x},
                [factor](const Tensor& g) { return std::vector<Tensor>{scale(g, factor)}; });
}

Tensor add_scalar(const Tensor& x, double value) {
  auto st = dispatch(x.dtype(), [&]<class T>() {
    const T c = static_cast<T>(value);
    return map_unary(x, [c](T v) { return v + c; });
  });
  return record(x.shape(), st, "add_scalar", {x},
                [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

Tensor square(const Tensor& x) {
  auto st = map_unary(x, [](auto v) { return v * v; });
  return record(x.shape(), st, "square", {x}, [x](const Tensor& g) {
    return std::vector<Tensor>{mul(g, scale(x, 2.0))};
  });
}

Tensor exp(const Tensor& x) {
  auto st = map_unary(x, [](auto v) { return std::exp(v); });
  return record(x.shape(), st, "exp", {x},
                [x](const Tensor& g) { return std::vector<Tensor>{mul(g, exp(x))}; });
}

Tensor log(const Tensor& x) {
  auto st = map_unary(x, [](auto v) { return std::log(v); });
  return record(x.shape(), st, "log", {x},
                [x](const Tensor& g) { return std::vector<Tensor>{div(g, x)}; });
}

Tensor sqrt(const Tensor& x) {
  auto st = map_unary(x, [](auto v) { return std::sqrt(v); });
  return record(x.shape(), st, "sqrt", {x}, [x](const Tensor& g) {
    return std::vector<Tensor>{div(scale(g, 0.5), sqrt(x))};
  });
}

// ---------------------------------------------------------------------- shape

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const auto rank = std::max(a.size(), b.size());
  const Shape pa = pad_leading(a, rank);
  const Shape pb = pad_leading(b, rank);
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      out[i] = pa[i];
    } else if (pa[i] == 1) {
      out[i] = pb[i];
    } else {
      throw std::invalid_argument("shapes " + shape_str(a) + " and " + shape_str(b) +
                                  " do not broadcast");
    }
  }
  return out;
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (x.shape().size() > shape.size() || broadcast_shape(x.shape(), shape) != shape) {
    throw std::invalid_argument("cannot broadcast " + shape_str(x.shape()) + " to " +
                                shape_str(shape));
  }
  const Shape small = pad_leading(x.shape(), shape.size());
  auto st = dispatch(x.dtype(), [&]<class T>() {
    auto src = x.data<T>();
    auto out = make_buffer<T>(shape_numel(shape));
    auto dst = span_of<T>(*out);
    for_each_broadcast(small, shape, [&](std::int64_t o, std::int64_t s) { dst[o] = src[s]; });
    return out;
  });
  return record(shape, st, "broadcast_to", {x}, [x](const Tensor& g) {
    return std::vector<Tensor>{sum_to(g, x.shape())};
  });
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (shape.size() > x.shape().size() || broadcast_shape(shape, x.shape()) != x.shape()) {
    throw std::invalid_argument("cannot sum " + shape_str(x.shape()) + " down to " +
                                shape_str(shape));
  }
  const Shape small = pad_leading(shape, x.shape().size());
  auto st = dispatch(x.dtype(), [&]<class T>() {
    auto src = x.data<T>();
    auto out = make_buffer<T>(shape_numel(shape));
    auto dst = span_of<T>(*out);
    for_each_broadcast(small, x.shape(),
                       [&](std::int64_t o, std::int64_t s) { dst[s] += src[o]; });
    return out;
  });
  return record(shape, st, "sum_to", {x}, [x](const Tensor& g) {
    return std::vector<Tensor>{broadcast_to(g, x.shape())};
  });
}

Tensor sum(const Tensor& x) { return sum_to(x, {}); }

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("cannot reshape " + shape_str(x.shape()) + " to " +
                                shape_str(shape));
  }
  // Shares storage; values are immutable once in a graph.
  return record(shape, x.storage(), "reshape", {x}, [x](const Tensor& g) {
    return std::vector<Tensor>{reshape(g, x.shape())};
  });
}

// -------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  require_same_dtype(a, b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: inner dimensions differ (" + shape_str(a.shape()) +
                                " · " + shape_str(b.shape()) + ")");
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto st = dispatch(a.dtype(), [&]<class T>() {
    using M = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    auto out = make_buffer<T>(m * n);
    Eigen::Map<M> y(span_of<T>(*out).data(), m, n);
    y.noalias() = Eigen::Map<const M>(a.data<T>().data(), m, k) *
                  Eigen::Map<const M>(b.data<T>().data(), k, n);
    return out;
  });
  return record({m, n}, st, "matmul", {a, b}, [a, b](const Tensor& g) {
    Tensor ga, gb;
    if (wants(a)) ga = matmul(g, transpose(b));
    if (wants(b)) gb = matmul(transpose(a), g);
    return std::vector<Tensor>{ga, gb};
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const auto r = a.dim(0), c = a.dim(1);
  auto st = dispatch(a.dtype(), [&]<class T>() {
    auto src = a.data<T>();
    auto out = make_buffer<T>(r * c);
    auto dst = span_of<T>(*out);
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    return out;
  });
  return record({c, r}, st, "transpose", {a},
                [](const Tensor& g) { return std::vector<Tensor>{transpose(g)}; });
}

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "dense");
  require_rank(weight, 2, "dense");
  if (x.dim(1) != weight.dim(0)) {
    throw std::invalid_argument("dense: feature dimension " + std::to_string(x.dim(1)) +
                                " does not match weight " + shape_str(weight.shape()));
  }
  Tensor y = matmul(x, weight);
  if (!bias.defined()) return y;
  if (bias.numel() != weight.dim(1)) {
    throw std::invalid_argument("dense: bias of shape " + shape_str(bias.shape()) +
                                " for " + std::to_string(weight.dim(1)) + " outputs");
  }
  return add(y, reshape(bias, {1, weight.dim(1)}));
}

// ----------------------------------------------------------------- convolution

Shape conv2d_output_shape(const Shape& input, const Shape& weight, int stride, int padding) {
  if (input.size() != 4 || weight.size() != 4) {
    throw std::invalid_argument("conv2d: expected NCHW input and OIHW weight, got " +
                                shape_str(input) + " and " + shape_str(weight));
  }
  if (stride < 1 || padding < 0) {
    throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
  }
  if (input[1] != weight[1]) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(input[1]) +
                                " channels but weight expects " + std::to_string(weight[1]));
  }
  const auto span_h = input[2] + 2 * padding - weight[2];
  const auto span_w = input[3] + 2 * padding - weight[3];
  if (span_h < 0 || span_w < 0) {
    throw std::invalid_argument("conv2d: kernel " + shape_str(weight) +
                                " yields a non-positive output extent for input " +
                                shape_str(input));
  }
  return {input[0], weight[0], span_h / stride + 1, span_w / stride + 1};
}

namespace {

Tensor conv2d_nobias(const Tensor& x, const Tensor& w, int stride, int padding) {
  require_same_dtype(x, w, "conv2d");
  const Shape out_shape = conv2d_output_shape(x.shape(), w.shape(), stride, padding);
  const auto d = conv_dims(x.shape(), w.shape(), stride, padding);
  auto st = dispatch(x.dtype(), [&]<class T>() {
    auto out = make_buffer<T>(shape_numel(out_shape));
    kernels::conv2d_forward<T>(d, x.data<T>(), w.data<T>(), span_of<T>(*out));
    return out;
  });
  return record(out_shape, st, "conv2d", {x, w}, [x, w, stride, padding](const Tensor& g) {
    Tensor gx, gw;
    if (wants(x)) gx = conv2d_input_grad(g, w, x.shape(), stride, padding);
    if (wants(w)) gw = conv2d_weight_grad(x, g, w.shape(), stride, padding);
    return std::vector<Tensor>{gx, gw};
  });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  Tensor y = conv2d_nobias(input, weight, stride, padding);
  if (!bias.defined()) return y;
  if (bias.numel() != weight.dim(0)) {
    throw std::invalid_argument("conv2d: bias of shape " + shape_str(bias.shape()) + " for " +
                                std::to_string(weight.dim(0)) + " output channels");
  }
  return add(y, reshape(bias, {1, weight.dim(0), 1, 1}));
}

Tensor conv2d_input_grad(const Tensor& grad_output, const Tensor& weight, const Shape& input_shape,
                         int stride, int padding) {
  require_same_dtype(grad_output, weight, "conv2d_input_grad");
  const Shape expected = conv2d_output_shape(input_shape, weight.shape(), stride, padding);
  if (grad_output.shape() != expected) {
    throw std::invalid_argument("conv2d_input_grad: gradient shape " +
                                shape_str(grad_output.shape()) + " != " + shape_str(expected));
  }
  const auto d = conv_dims(input_shape, weight.shape(), stride, padding);
  auto st = dispatch(weight.dtype(), [&]<class T>() {
    auto out = make_buffer<T>(shape_numel(input_shape));
    kernels::conv2d_backward_input<T>(d, grad_output.data<T>(), weight.data<T>(),
                                      span_of<T>(*out));
    return out;
  });
  const Tensor g = grad_output;
  const Tensor w = weight;
  return record(input_shape, st, "conv2d_input_grad", {g, w},
                [g, w, stride, padding](const Tensor& gz) {
                  Tensor gg, gw;
                  if (wants(g)) gg = conv2d(gz, w, Tensor(), stride, padding);
                  if (wants(w)) gw = conv2d_weight_grad(gz, g, w.shape(), stride, padding);
                  return std::vector<Tensor>{gg, gw};
                });
}

Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_output,
                          const Shape& weight_shape, int stride, int padding) {
  require_same_dtype(input, grad_output, "conv2d_weight_grad");
  const Shape expected = conv2d_output_shape(input.shape(), weight_shape, stride, padding);
  if (grad_output.shape() != expected) {
    throw std::invalid_argument("conv2d_weight_grad: gradient shape " +
                                shape_str(grad_output.shape()) + " != " + shape_str(expected));
  }
  const auto d = conv_dims(input.shape(), weight_shape, stride, padding);
  auto st = dispatch(input.dtype(), [&]<class T>() {
    auto out = make_buffer<T>(shape_numel(weight_shape));
    kernels::conv2d_backward_weight<T>(d, input.data<T>(), grad_output.data<T>(),
                                       span_of<T>(*out));
    return out;
  });
  const Tensor x = input;
  const Tensor g = grad_output;
  return record(weight_shape, st, "conv2d_weight_grad", {x, g},
                [x, g, stride, padding](const Tensor& gu) {
                  Tensor gx, gg;
                  if (wants(x)) gx = conv2d_input_grad(g, gu, x.shape(), stride, padding);
                  if (wants(g)) gg = conv2d(x, gu, Tensor(), stride, padding);
                  return std::vector<Tensor>{gx, gg};
                });
}

Tensor conv_transpose_4x4(const Tensor& latent, const Tensor& weight, const Tensor& bias) {
  require_rank(latent, 4, "conv_transpose_4x4");
  require_rank(weight, 4, "conv_transpose_4x4");
  if (latent.dim(2) != 1 || latent.dim(3) != 1) {
    throw std::invalid_argument("conv_transpose_4x4: input spatial extent must be 1x1, got " +
                                shape_str(latent.shape()));
  }
  if (weight.dim(2) != 4 || weight.dim(3) != 4 || weight.dim(0) != latent.dim(1)) {
    throw std::invalid_argument("conv_transpose_4x4: weight " + shape_str(weight.shape()) +
                                " incompatible with input " + shape_str(latent.shape()));
  }
  const auto n = latent.dim(0), c = latent.dim(1), o = weight.dim(1);
  // With a 1x1 input every output pixel is a weighted sum of weight slices.
  Tensor y = matmul(reshape(latent, {n, c}), reshape(weight, {c, o * 16}));
  y = reshape(y, {n, o, 4, 4});
  if (bias.defined()) y = add(y, reshape(bias, {1, o, 1, 1}));
  return y;
}

// ------------------------------------------------------------------ resampling

Tensor avg_pool_2x2(const Tensor& x) {
  require_rank(x, 4, "avg_pool_2x2");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("avg_pool_2x2: odd spatial extent in " + shape_str(x.shape()));
  }
  const Shape out_shape{n, c, h / 2, w / 2};
  auto st = dispatch(x.dtype(), [&]<class T>() {
    auto src = x.data<T>();
    auto out = make_buffer<T>(shape_numel(out_shape));
    auto dst = span_of<T>(*out);
    const auto oh = h / 2, ow = w / 2;
    for (std::int64_t p = 0; p < n * c; ++p) {
      const T* plane = src.data() + p * h * w;
      T* o = dst.data() + p * oh * ow;
      for (std::int64_t y = 0; y < oh; ++y) {
        const T* r0 = plane + (2 * y) * w;
        const T* r1 = r0 + w;
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          o[y * ow + xx] = (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]) * T(0.25);
        }
      }
    }
    return out;
  });
  return record(out_shape, st, "avg_pool_2x2", {x}, [](const Tensor& g) {
    return std::vector<Tensor>{scale(upsample_nearest_2x(g), 0.25)};
  });
}

Tensor upsample_nearest_2x(const Tensor& x) {
  require_rank(x, 4, "upsample_nearest_2x");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Shape out_shape{n, c, 2 * h, 2 * w};
  auto st = dispatch(x.dtype(), [&]<class T>() {
    auto src = x.data<T>();
    auto out = make_buffer<T>(shape_numel(out_shape));
    auto dst = span_of<T>(*out);
    const auto ow = 2 * w;
    for (std::int64_t p = 0; p < n * c; ++p) {
      const T* plane = src.data() + p * h * w;
      T* o = dst.data() + p * 4 * h * w;
      for (std::int64_t y = 0; y < h; ++y) {
        T* r0 = o + (2 * y) * ow;
        T* r1 = r0 + ow;
        for (std::int64_t xx = 0; xx < w; ++xx) {
          const T v = plane[y * w + xx];
          r0[2 * xx] = r0[2 * xx + 1] = r1[2 * xx] = r1[2 * xx + 1] = v;
        }
      }
    }
    return out;
  });
  return record(out_shape, st, "upsample_nearest_2x", {x}, [](const Tensor& g) {
    return std::vector<Tensor>{scale(avg_pool_2x2(g), 4.0)};
  });
}

// ------------------------------------------------------------ channel plumbing

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "concat_channels");
  const auto va = channel_view(a, "concat_channels");
  const auto vb = channel_view(b, "concat_channels");
  Shape sa = a.shape(), sb = b.shape();
  sa[1] = sb[1] = 0;
  if (sa != sb) {
    throw std::invalid_argument("concat_channels: batch/spatial mismatch between " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[1] = va.channels + vb.channels;
  auto st = dispatch(a.dtype(), [&]<class T>() {
    auto pa = a.data<T>();
    auto pb = b.data<T>();
    auto out = make_buffer<T>(shape_numel(out_shape));
    auto dst = span_of<T>(*out);
    const auto la = va.channels * va.inner, lb = vb.channels * vb.inner;
    for (std::int64_t i = 0; i < va.outer; ++i) {
      std::copy_n(pa.data() + i * la, la, dst.data() + i * (la + lb));
      std::copy_n(pb.data() + i * lb, lb, dst.data() + i * (la + lb) + la);
    }
    return out;
  });
  const auto ca = va.channels, cb = vb.channels;
  return record(out_shape, st, "concat_channels", {a, b}, [a, b, ca, cb](const Tensor& g) {
    Tensor ga, gb;
    if (wants(a)) ga = slice_channels(g, 0, ca);
    if (wants(b)) gb = slice_channels(g, ca, ca + cb);
    return std::vector<Tensor>{ga, gb};
  });
}

Tensor slice_channels(const Tensor& x, std::int64_t begin, std::int64_t end) {
  const auto v = channel_view(x, "slice_channels");
  if (begin < 0 || end < begin || end > v.channels) {
    throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) + "," +
                                std::to_string(end) + ") outside " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[1] = end - begin;
  auto st = dispatch(x.dtype(), [&]<class T>() {
    auto src = x.data<T>();
    auto out = make_buffer<T>(shape_numel(out_shape));
    auto dst = span_of<T>(*out);
    const auto len = (end - begin) * v.inner;
    for (std::int64_t i = 0; i < v.outer; ++i) {
      std::copy_n(src.data() + (i * v.channels + begin) * v.inner, len, dst.data() + i * len);
    }
    return out;
  });
  const auto total = v.channels;
  return record(out_shape, st, "slice_channels", {x}, [begin, total](const Tensor& g) {
    return std::vector<Tensor>{pad_channels(g, begin, total)};
  });
}

Tensor pad_channels(const Tensor& x, std::int64_t begin, std::int64_t total) {
  const auto v = channel_view(x, "pad_channels");
  if (begin < 0 || begin + v.channels > total) {
    throw std::invalid_argument("pad_channels: cannot place " + shape_str(x.shape()) +
                                " at offset " + std::to_string(begin) + " in " +
                                std::to_string(total) + " channels");
  }
  Shape out_shape = x.shape();
  out_shape[1] = total;
  auto st = dispatch(x.dtype(), [&]<class T>() {
    auto src = x.data<T>();
    auto out = make_buffer<T>(shape_numel(out_shape));
    auto dst = span_of<T>(*out);
    const auto len = v.channels * v.inner;
    for (std::int64_t i = 0; i < v.outer; ++i) {
      std::copy_n(src.data() + i * len, len, dst.data() + (i * total + begin) * v.inner);
    }
    return out;
  });
  const auto count = v.channels;
  return record(out_shape, st, "pad_channels", {x}, [begin, count](const Tensor& g) {
    return std::vector<Tensor>{slice_channels(g, begin, begin + count)};
  });
}

Tensor gather(const Tensor& x, const IndexMap& index, const Shape& out_shape) {
  if (!index || static_cast<std::int64_t>(index->size()) != shape_numel(out_shape)) {
    throw std::invalid_argument("gather: index map does not match output shape " +
                                shape_str(out_shape));
  }
  auto st = dispatch(x.dtype(), [&]<class T>() {
    auto src = x.data<T>();
    auto out = make_buffer<T>(shape_numel(out_shape));
    auto dst = span_of<T>(*out);
    for (std::size_t i = 0; i < index->size(); ++i) dst[i] = src[static_cast<std::size_t>((*index)[i])];
    return out;
  });
  const Shape in_shape = x.shape();
  return record(out_shape, st, "gather", {x}, [index, in_shape](const Tensor& g) {
    return std::vector<Tensor>{scatter_add(g, index, in_shape)};
  });
}

Tensor scatter_add(const Tensor& x, const IndexMap& index, const Shape& out_shape) {
  if (!index || static_cast<std::int64_t>(index->size()) != x.numel()) {
    throw std::invalid_argument("scatter_add: index map does not match input");
  }
  auto st = dispatch(x.dtype(), [&]<class T>() {
    auto src = x.data<T>();
    auto out = make_buffer<T>(shape_numel(out_shape));
    auto dst = span_of<T>(*out);
    for (std::size_t i = 0; i < index->size(); ++i) dst[static_cast<std::size_t>((*index)[i])] += src[i];
    return out;
  });
  const Shape in_shape = x.shape();
  return record(out_shape, st, "scatter_add", {x}, [index, in_shape](const Tensor& g) {
    return std::vector<Tensor>{gather(g, index, in_shape)};
  });
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride, int padding) {
  require_rank(x, 4, "max_pool2d");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = (h + 2 * padding - kernel) / stride + 1;
  const auto ow = (w + 2 * padding - kernel) / stride + 1;
  if (oh < 1 || ow < 1) throw std::invalid_argument("max_pool2d: empty output");
  auto index = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n * c * oh * ow));
  const auto values = x.to_vector();
  std::size_t k = 0;
  for (std::int64_t p = 0; p < n * c; ++p) {
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        std::int64_t best = -1;
        double best_v = -std::numeric_limits<double>::infinity();
        for (int ky = 0; ky < kernel; ++ky) {
          const auto iy = y * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const auto ix = xx * stride - padding + kx;
            if (ix < 0 || ix >= w) continue;
            const auto flat = (p * h + iy) * w + ix;
            if (best < 0 || values[static_cast<std::size_t>(flat)] > best_v) {
              best = flat;
              best_v = values[static_cast<std::size_t>(flat)];
            }
          }
        }
        (*index)[k++] = best;
      }
    }
  }
  return gather(x, index, {n, c, oh, ow});
}

// ----------------------------------------------------------------- activations

Tensor leaky_relu(const Tensor& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw std::invalid_argument("leaky_relu: slope must lie in (0,1)");
  }
  const Tensor mask = Tensor::make_result(
      x.shape(), map_unary(x, [slope](auto v) { return v >= 0 ? 1.0 : slope; }), nullptr);
  return masked(x, mask, "leaky_relu");
}

Tensor relu(const Tensor& x) {
  const Tensor mask = Tensor::make_result(
      x.shape(), map_unary(x, [](auto v) { return v >= 0 ? 1.0 : 0.0; }), nullptr);
  return masked(x, mask, "relu");
}

// ------------------------------------------------------------- normalization

Tensor minibatch_stddev(const Tensor& x, double eps) {
  require_rank(x, 4, "minibatch_stddev");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (n < 1) throw std::invalid_argument("minibatch_stddev: empty batch");
  const Shape per_position{1, c, h, w};
  const Tensor mu = scale(sum_to(x, per_position), 1.0 / static_cast<double>(n));
  const Tensor var = scale(sum_to(square(sub(x, mu)), per_position), 1.0 / static_cast<double>(n));
  const Tensor sd = sqrt(add_scalar(var, eps));
  const Tensor avg = reshape(mean(sd), {1, 1, 1, 1});
  return concat_channels(x, broadcast_to(avg, {n, 1, h, w}));
}

Tensor batch_norm_2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     BatchNormStats& stats, NormMode mode, double momentum, double eps) {
  require_rank(x, 4, "batch_norm_2d");
  const auto c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw std::invalid_argument("batch_norm_2d: gamma/beta must have " + std::to_string(c) +
                                " entries");
  }
  const Shape per_channel{1, c, 1, 1};
  const Tensor g = reshape(gamma, per_channel);
  const Tensor b = reshape(beta, per_channel);
  if (mode == NormMode::Eval) {
    const Tensor m = reshape(stats.running_mean.detach(), per_channel);
    const Tensor inv = reshape(stats.running_var.detach(), per_channel);
    const Tensor xhat = div(sub(x, m), sqrt(add_scalar(inv, eps)));
    return add(mul(xhat, g), b);
  }
  const auto count = x.dim(0) * x.dim(2) * x.dim(3);
  if (count < 2) {
    throw std::invalid_argument("batch_norm_2d: train mode needs N*H*W >= 2, got " +
                                shape_str(x.shape()));
  }
  const Tensor m = scale(sum_to(x, per_channel), 1.0 / static_cast<double>(count));
  const Tensor centered = sub(x, m);
  const Tensor var =
      scale(sum_to(square(centered), per_channel), 1.0 / static_cast<double>(count));
  const Tensor xhat = div(centered, sqrt(add_scalar(var, eps)));

  {
    NoGradGuard no_grad;
    const double unbias = static_cast<double>(count) / static_cast<double>(count - 1);
    const Tensor batch_mean = reshape(m.detach(), {c});
    const Tensor batch_var = scale(reshape(var.detach(), {c}), unbias);
    stats.running_mean =
        add(scale(stats.running_mean, 1.0 - momentum), scale(batch_mean, momentum));
    stats.running_var = add(scale(stats.running_var, 1.0 - momentum), scale(batch_var, momentum));
  }
  return add(mul(xhat, g), b);
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const auto n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(n) + " rows");
  }
  const auto values = logits.to_vector();
  std::vector<double> row_max(static_cast<std::size_t>(n));
  std::vector<double> onehot(static_cast<std::size_t>(n * k), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) +
                                  " outside [0," + std::to_string(k) + ")");
    }
    onehot[static_cast<std::size_t>(i * k + y)] = 1.0;
    row_max[static_cast<std::size_t>(i)] =
        *std::max_element(values.begin() + i * k, values.begin() + (i + 1) * k);
  }
  // The shift is a constant: its gradient contribution cancels exactly.
  const Tensor shift = Tensor::from_vector({n, 1}, row_max, logits.dtype());
  const Tensor picks = Tensor::from_vector({n, k}, onehot, logits.dtype());
  const Tensor shifted = sub(logits, shift);
  const Tensor lse = log(sum_to(exp(shifted), {n, 1}));
  const Tensor picked = sum_to(mul(shifted, picks), {n, 1});
  return mean(sub(lse, picked));
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax");
  const auto n = logits.dim(0), k = logits.dim(1);
  auto v = logits.to_vector();
  for (std::int64_t i = 0; i < n; ++i) {
    auto row = v.begin() + i * k;
    const double m = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::int64_t j = 0; j < k; ++j) z += (row[j] = std::exp(row[j] - m));
    for (std::int64_t j = 0; j < k; ++j) row[j] /= z;
  }
  return Tensor::from_vector({n, k}, v, logits.dtype());
}

// ------------------------------------------------------------- differentiation

std::vector<Tensor> grad(const Tensor& objective, std::span<const Tensor> wrt, bool create_graph,
                         bool allow_unused) {
  if (!objective.defined() || objective.numel() != 1) {
    throw std::invalid_argument("grad: objective must be a scalar");
  }
  if (!objective.requires_grad() && !allow_unused) {
    throw std::invalid_argument("grad: objective is not connected to any differentiable input");
  }
  for (const auto& t : wrt) {
    if (!t.defined() || !t.requires_grad()) {
      throw std::invalid_argument("grad: target does not require grad");
    }
  }

  // Post-order over the graph, iterative to survive deep networks.
  std::vector<Tensor> order;
  std::unordered_set<const void*> visited;
  struct Frame {
    Tensor t;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({objective, 0});
  visited.insert(objective.id());
  while (!stack.empty()) {
    auto& f = stack.back();
    const auto& fn = f.t.grad_fn();
    if (fn && f.next < fn->inputs().size()) {
      const Tensor& in = fn->inputs()[f.next++];
      if (in.defined() && in.requires_grad() && visited.insert(in.id()).second) {
        stack.push_back({in, 0});
      }
      continue;
    }
    order.push_back(f.t);
    stack.pop_back();
  }
  for (const auto& t : wrt) {
    if (!allow_unused && !visited.count(t.id())) {
      throw std::invalid_argument("grad: target of shape " + shape_str(t.shape()) +
                                  " is not part of the objective's graph");
    }
  }

  EnableGradGuard mode(create_graph);
  if (!objective.requires_grad()) order.clear();
  std::unordered_map<const void*, Tensor> grads;
  grads[objective.id()] = Tensor::full(objective.shape(), 1.0, objective.dtype());
  std::unordered_set<const void*> keep;
  for (const auto& t : wrt) keep.insert(t.id());

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Tensor& t = *it;
    auto found = grads.find(t.id());
    if (found == grads.end()) continue;
    const auto& fn = t.grad_fn();
    if (!fn) continue;
    const Tensor g = found->second;
    if (!keep.count(t.id())) grads.erase(found);
    const auto in_grads = fn->backward(g);
    const auto& inputs = fn->inputs();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (i >= in_grads.size() || !in_grads[i].defined()) continue;
      if (!inputs[i].defined() || !inputs[i].requires_grad()) continue;
      auto [slot, inserted] = grads.try_emplace(inputs[i].id(), in_grads[i]);
      if (!inserted) slot->second = add(slot->second, in_grads[i]);
    }
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& t : wrt) {
    auto found = grads.find(t.id());
    out.push_back(found != grads.end() ? found->second : Tensor::zeros(t.shape(), t.dtype()));
  }
  return out;
}

}  // namespace msggan::ad
