#include "msggan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

#include "msggan/gan_train.hpp"
#include "msggan/msggan_net.hpp"
#include "msggan/ops.hpp"
#include "msggan/rng.hpp"

namespace msggan::gradcheck {

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) {
    x = lo + (hi - lo) * rng.uniform();
    // Keep clear of activation kinks so ±h never crosses one.
    if (lo < 0.0 && std::abs(x) < 1e-3) x = x < 0 ? -1e-3 : 1e-3;
  }
  return Tensor::from_vector(shape, v, DType::F64);
}

Tensor as_leaf(const Tensor& t) {
  Tensor leaf = t.clone();
  leaf.set_requires_grad(true);
  return leaf;
}

double inf_norm(const Tensor& t) {
  double m = 0.0;
  for (double v : t.to_vector()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

std::vector<Tensor> numeric_gradient(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                     double h) {
  NoGradGuard no_grad;
  std::vector<Tensor> grads;
  std::vector<Tensor> args;
  for (const auto& t : inputs) args.push_back(t.detach());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].dtype() != DType::F64) {
      throw std::invalid_argument("numeric_gradient: inputs must be fp64");
    }
    const auto base = inputs[i].to_vector();
    std::vector<double> g(base.size());
    for (std::size_t j = 0; j < base.size(); ++j) {
      auto v = base;
      v[j] = base[j] + h;
      args[i] = Tensor::from_vector(inputs[i].shape(), v, DType::F64);
      const double up = f(args).item();
      v[j] = base[j] - h;
      args[i] = Tensor::from_vector(inputs[i].shape(), v, DType::F64);
      const double down = f(args).item();
      g[j] = (up - down) / (2.0 * h);
    }
    args[i] = inputs[i].detach();
    grads.push_back(Tensor::from_vector(inputs[i].shape(), g, DType::F64));
  }
  return grads;
}

double relative_error(const std::vector<Tensor>& analytic, const std::vector<Tensor>& numeric) {
  if (analytic.size() != numeric.size()) {
    throw std::invalid_argument("relative_error: gradient count mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const auto a = analytic[i].to_vector();
    const auto n = numeric[i].to_vector();
    if (a.size() != n.size()) throw std::invalid_argument("relative_error: shape mismatch");
    double diff = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) diff = std::max(diff, std::abs(a[j] - n[j]));
    const double scale = std::max({inf_norm(analytic[i]), inf_norm(numeric[i]), 1e-300});
    worst = std::max(worst, diff / scale);
  }
  return worst;
}

double max_relative_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double h) {
  std::vector<Tensor> leaves;
  for (const auto& t : inputs) leaves.push_back(as_leaf(t));
  const Tensor objective = f(leaves);
  const auto analytic = ad::grad(objective, leaves, false, /*allow_unused=*/true);
  return relative_error(analytic, numeric_gradient(f, inputs, h));
}

std::vector<CheckResult> run_op_suite(std::uint64_t seed, double tolerance) {
  using namespace msggan::ad;
  Rng rng(seed);
  std::vector<CheckResult> results;

  // Each op's output is contracted with fixed random weights so that every
  // output element contributes a distinct amount to the scalar.
  auto check = [&](const std::string& name, std::function<Tensor(const std::vector<Tensor>&)> op,
                   std::vector<Tensor> inputs) {
    Shape out_shape;
    {
      NoGradGuard no_grad;
      out_shape = op(inputs).shape();
    }
    const Tensor weights = random_tensor(out_shape, rng);
    ScalarFn f = [op, weights](const std::vector<Tensor>& xs) { return sum(mul(op(xs), weights)); };
    results.push_back({name, max_relative_error(f, inputs), tolerance});
  };
  auto r = [&](Shape s) { return random_tensor(s, rng); };
  auto pos = [&](Shape s) { return random_tensor(s, rng, 0.5, 1.5); };
  using V = std::vector<Tensor>;

  check("add (broadcast)", [](const V& x) { return add(x[0], x[1]); }, {r({2, 3, 4}), r({3, 1})});
  check("sub", [](const V& x) { return sub(x[0], x[1]); }, {r({3, 4}), r({3, 4})});
  check("mul (broadcast)", [](const V& x) { return mul(x[0], x[1]); }, {r({2, 3, 2}), r({2, 1, 2})});
  check("div", [](const V& x) { return div(x[0], x[1]); }, {r({3, 4}), pos({3, 4})});
  check("scale", [](const V& x) { return scale(x[0], -1.7); }, {r({5})});
  check("add_scalar", [](const V& x) { return add_scalar(x[0], 0.3); }, {r({5})});
  check("square", [](const V& x) { return square(x[0]); }, {r({4, 3})});
  check("exp", [](const V& x) { return exp(x[0]); }, {r({4, 3})});
  check("log", [](const V& x) { return log(x[0]); }, {pos({4, 3})});
  check("sqrt", [](const V& x) { return sqrt(x[0]); }, {pos({4, 3})});
  check("broadcast_to", [](const V& x) { return broadcast_to(x[0], {2, 3, 4}); }, {r({3, 1})});
  check("sum_to", [](const V& x) { return sum_to(x[0], {1, 3, 1}); }, {r({2, 3, 4})});
  check("mean", [](const V& x) { return mean(x[0]); }, {r({2, 3})});
  check("reshape", [](const V& x) { return reshape(x[0], {6, 2}); }, {r({3, 4})});
  check("matmul", [](const V& x) { return matmul(x[0], x[1]); }, {r({3, 4}), r({4, 2})});
  check("transpose", [](const V& x) { return transpose(x[0]); }, {r({3, 4})});
  check("dense", [](const V& x) { return dense(x[0], x[1], x[2]); },
        {r({3, 5}), r({5, 2}), r({2})});
  check("conv2d 3x3 pad1", [](const V& x) { return conv2d(x[0], x[1], x[2], 1, 1); },
        {r({2, 3, 5, 5}), r({4, 3, 3, 3}), r({4})});
  check("conv2d 3x3 stride2", [](const V& x) { return conv2d(x[0], x[1], Tensor(), 2, 1); },
        {r({2, 2, 6, 6}), r({3, 2, 3, 3})});
  check("conv2d 1x1", [](const V& x) { return conv2d(x[0], x[1], x[2], 1, 0); },
        {r({2, 3, 4, 4}), r({2, 3, 1, 1}), r({2})});
  check("conv2d 4x4 valid", [](const V& x) { return conv2d(x[0], x[1], x[2], 1, 0); },
        {r({2, 3, 4, 4}), r({2, 3, 4, 4}), r({2})});
  check("conv2d_input_grad",
        [](const V& x) { return conv2d_input_grad(x[0], x[1], {2, 3, 5, 5}, 1, 1); },
        {r({2, 4, 5, 5}), r({4, 3, 3, 3})});
  check("conv2d_weight_grad",
        [](const V& x) { return conv2d_weight_grad(x[0], x[1], {4, 3, 3, 3}, 2, 1); },
        {r({2, 3, 5, 5}), r({2, 4, 3, 3})});
  check("conv_transpose_4x4", [](const V& x) { return conv_transpose_4x4(x[0], x[1], x[2]); },
        {r({2, 3, 1, 1}), r({3, 2, 4, 4}), r({2})});
  check("avg_pool_2x2", [](const V& x) { return avg_pool_2x2(x[0]); }, {r({2, 2, 4, 4})});
  check("upsample_nearest_2x", [](const V& x) { return upsample_nearest_2x(x[0]); },
        {r({2, 2, 3, 3})});
  check("concat_channels", [](const V& x) { return concat_channels(x[0], x[1]); },
        {r({2, 2, 3, 3}), r({2, 3, 3, 3})});
  check("slice_channels", [](const V& x) { return slice_channels(x[0], 1, 3); }, {r({2, 4, 2, 2})});
  check("pad_channels", [](const V& x) { return pad_channels(x[0], 1, 4); }, {r({2, 2, 2, 2})});
  {
    auto idx = std::make_shared<std::vector<std::int64_t>>(std::vector<std::int64_t>{4, 0, 4, 7, 2, 2});
    check("gather", [idx](const V& x) { return gather(x[0], idx, {2, 3}); }, {r({8})});
    check("scatter_add", [idx](const V& x) { return scatter_add(x[0], idx, {8}); }, {r({2, 3})});
  }
  check("max_pool2d 3x3 s2", [](const V& x) { return max_pool2d(x[0], 3, 2, 1); },
        {r({2, 2, 6, 6})});
  check("leaky_relu", [](const V& x) { return leaky_relu(x[0], 0.2); }, {r({3, 5})});
  check("relu", [](const V& x) { return relu(x[0]); }, {r({3, 5})});
  check("minibatch_stddev", [](const V& x) { return minibatch_stddev(x[0], 1e-8); },
        {r({3, 2, 3, 3})});
  check("batch_norm_2d train",
        [](const V& x) {
          BatchNormStats stats{Tensor::zeros({3}, DType::F64), Tensor::full({3}, 1.0, DType::F64)};
          return batch_norm_2d(x[0], x[1], x[2], stats, NormMode::Train);
        },
        {r({4, 3, 2, 2}), r({3}), r({3})});
  check("batch_norm_2d eval",
        [](const V& x) {
          BatchNormStats stats{Tensor::full({3}, 0.1, DType::F64),
                               Tensor::full({3}, 0.7, DType::F64)};
          return batch_norm_2d(x[0], x[1], x[2], stats, NormMode::Eval);
        },
        {r({2, 3, 2, 2}), r({3}), r({3})});
  {
    const std::vector<int> labels{1, 0, 2, 1};
    check("softmax_cross_entropy",
          [labels](const V& x) { return softmax_cross_entropy(x[0], labels); }, {r({4, 3})});
  }
  check("latent_normalize", [](const V& x) { return net::latent_normalize(x[0]); }, {r({3, 6})});
  return results;
}

std::vector<CheckResult> run_penalty_suite(std::uint64_t seed, double tolerance) {
  using namespace msggan::ad;
  using V = std::vector<Tensor>;
  Rng rng(seed);
  std::vector<CheckResult> results;
  const double lambda = 10.0;
  const std::uint64_t eps_seed = mix_seed(seed, 99);

  // Two-layer perceptron critic on a single 3×2×2 scale.
  {
    const net::ImagePyramid real{random_tensor({4, 3, 2, 2}, rng)};
    const net::ImagePyramid fake{random_tensor({4, 3, 2, 2}, rng)};
    const V params{random_tensor({12, 5}, rng), random_tensor({5}, rng),
                   random_tensor({5, 1}, rng), random_tensor({1}, rng)};
    ScalarFn f = [&](const V& p) {
      gan::Critic critic = [&p](const net::ImagePyramid& x) {
        const Tensor flat = reshape(x[0], {x[0].dim(0), 12});
        return dense(leaky_relu(dense(flat, p[0], p[1]), 0.2), p[2], p[3]);
      };
      Rng eps_rng(eps_seed);
      return gan::gradient_penalty(critic, real, fake, lambda, eps_rng);
    };
    results.push_back({"penalty, 2-layer perceptron critic", max_relative_error(f, params),
                       tolerance});
  }

  // Two-scale convolutional critic: conv, pool, combine, minibatch stddev, conv.
  {
    const net::ImagePyramid real{random_tensor({3, 3, 4, 4}, rng), random_tensor({3, 3, 8, 8}, rng)};
    const net::ImagePyramid fake{random_tensor({3, 3, 4, 4}, rng), random_tensor({3, 3, 8, 8}, rng)};
    const V params{random_tensor({4, 3, 3, 3}, rng), random_tensor({4}, rng),
                   random_tensor({2, 8, 3, 3}, rng), random_tensor({2}, rng),
                   random_tensor({32, 1}, rng)};
    ScalarFn f = [&](const V& p) {
      gan::Critic critic = [&p](const net::ImagePyramid& x) {
        Tensor h = avg_pool_2x2(leaky_relu(conv2d(x[1], p[0], p[1], 1, 1), 0.2));
        h = minibatch_stddev(concat_channels(h, x[0]), 1e-8);
        h = leaky_relu(conv2d(h, p[2], p[3], 1, 1), 0.2);
        return matmul(reshape(h, {h.dim(0), 32}), p[4]);
      };
      Rng eps_rng(eps_seed);
      return gan::gradient_penalty(critic, real, fake, lambda, eps_rng);
    };
    results.push_back({"penalty, 2-scale convolutional critic", max_relative_error(f, params),
                       tolerance});
  }
  return results;
}

void print_results(const std::vector<CheckResult>& results, std::ostream& os) {
  for (const auto& r : results) {
    os << std::left << std::setw(40) << r.name << " rel.err " << std::scientific
       << std::setprecision(3) << r.error << "  (< " << r.tolerance << ")  "
       << (r.pass() ? "PASS" : "FAIL") << "\n";
  }
  os << std::defaultfloat;
}

}  // namespace msggan::gradcheck
