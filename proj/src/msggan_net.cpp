#include "msggan/msggan_net.hpp"

#include <cmath>
#include <stdexcept>

namespace msggan::net {

namespace {

Shape chw(const Shape& nchw) { return Shape(nchw.begin() + 1, nchw.end()); }

void trace_row(ShapeTrace* trace, int block, std::string op, std::string act, const Shape& nchw,
               bool rgb_tap = false) {
  if (trace) trace->push_back({block, std::move(op), std::move(act), chw(nchw), rgb_tap});
}

void validate_schedule(const ChannelSchedule& s, int depth, const char* who) {
  if (depth < 1) throw std::invalid_argument(std::string(who) + ": depth must be >= 1");
  if (static_cast<int>(s.size()) != depth) {
    throw std::invalid_argument(std::string(who) + ": schedule has " + std::to_string(s.size()) +
                                " entries for depth " + std::to_string(depth));
  }
  for (auto c : s) {
    if (c < 1) throw std::invalid_argument(std::string(who) + ": channel counts must be positive");
  }
}

}  // namespace

ChannelSchedule full_schedule() { return {512, 512, 512, 512, 256, 128, 64, 32, 16}; }

ChannelSchedule full_schedule(int depth) {
  auto s = full_schedule();
  if (depth < 1 || depth > static_cast<int>(s.size())) {
    throw std::invalid_argument("standard schedule covers depths 1..9, got " +
                                std::to_string(depth));
  }
  s.resize(static_cast<std::size_t>(depth));
  return s;
}

std::int64_t block_resolution(int k) { return std::int64_t{4} << (k - 1); }

GeneratorSpec GeneratorSpec::standard(int depth) {
  GeneratorSpec s;
  s.depth = depth;
  s.schedule = full_schedule(depth);
  return s;
}

void GeneratorSpec::validate() const {
  validate_schedule(schedule, depth, "GeneratorSpec");
  if (latent_dim < 1) throw std::invalid_argument("GeneratorSpec: latent_dim must be >= 1");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
    throw std::invalid_argument("GeneratorSpec: leaky_slope must lie in (0,1)");
  }
}

DiscriminatorSpec DiscriminatorSpec::standard(int depth) {
  DiscriminatorSpec s;
  s.depth = depth;
  s.schedule = full_schedule(depth);
  return s;
}

DiscriminatorSpec DiscriminatorSpec::matching(const GeneratorSpec& g) {
  DiscriminatorSpec s;
  s.depth = g.depth;
  s.schedule = g.schedule;
  s.leaky_slope = g.leaky_slope;
  s.equalized_lr = g.equalized_lr;
  s.dtype = g.dtype;
  return s;
}

std::int64_t DiscriminatorSpec::from_rgb_channels() const {
  return entry_from_rgb_channels > 0 ? entry_from_rgb_channels : schedule.back();
}

void DiscriminatorSpec::validate() const {
  validate_schedule(schedule, depth, "DiscriminatorSpec");
  if (entry_from_rgb_channels < 0) {
    throw std::invalid_argument("DiscriminatorSpec: entry_from_rgb_channels must be >= 0");
  }
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
    throw std::invalid_argument("DiscriminatorSpec: leaky_slope must lie in (0,1)");
  }
  if (mbstd_eps < 0.0) throw std::invalid_argument("DiscriminatorSpec: mbstd_eps must be >= 0");
}

Tensor latent_normalize(const Tensor& z) {
  if (z.rank() != 2) {
    throw std::invalid_argument("latent_normalize: expected N×d, got " + shape_str(z.shape()));
  }
  const auto n = z.dim(0), d = z.dim(1);
  const Tensor sq = ad::sum_to(ad::square(z), {n, 1});
  for (std::int64_t i = 0; i < n; ++i) {
    if (!(sq.at(i) > 0.0)) {
      throw std::invalid_argument("latent_normalize: row " + std::to_string(i) +
                                  " has zero norm");
    }
  }
  return ad::div(ad::scale(z, std::sqrt(static_cast<double>(d))), ad::sqrt(sq));
}

Tensor combine_phi_simple(const Tensor& features, const Tensor& rgb) {
  return ad::concat_channels(features, rgb);
}

// ------------------------------------------------------------------ generator

Generator::Generator(GeneratorSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(seed);
  const auto dt = spec_.dtype;
  const bool eq = spec_.equalized_lr;
  for (int k = 1; k <= spec_.depth; ++k) {
    const std::string name = "block" + std::to_string(k);
    const auto c = spec_.schedule[static_cast<std::size_t>(k - 1)];
    Block b;
    b.channels = c;
    if (k == 1) {
      const auto latent = spec_.latent_dim;
      b.latent_weight = Parameter(name + "/conv4x4/weight",
                                  he_normal({latent, c, 4, 4}, latent, rng, dt));
      b.latent_bias = Parameter(name + "/conv4x4/bias", Tensor::zeros({c}, dt));
      b.conv_b = Conv2dLayer::create(name + "/conv3x3", c, c, 3, 1, 1, true, rng, dt, eq);
    } else {
      const auto prev = spec_.schedule[static_cast<std::size_t>(k - 2)];
      b.conv_a = Conv2dLayer::create(name + "/conv3x3_a", prev, c, 3, 1, 1, true, rng, dt, eq);
      b.conv_b = Conv2dLayer::create(name + "/conv3x3_b", c, c, 3, 1, 1, true, rng, dt, eq);
    }
    b.to_rgb = Conv2dLayer::create(name + "/to_rgb", c, 3, 1, 1, 0, true, rng, dt, eq);
    blocks_.push_back(std::move(b));
  }
}

Tensor Generator::run_block(std::size_t index, const Tensor& x, ShapeTrace* trace) const {
  const auto& b = blocks_[index];
  const int k = static_cast<int>(index) + 1;
  const double slope = spec_.leaky_slope;
  Tensor h;
  if (index == 0) {
    const Tensor zn = latent_normalize(x);
    const Tensor map = ad::reshape(zn, {zn.dim(0), zn.dim(1), 1, 1});
    trace_row(trace, k, "Latent vector", "Norm", map.shape());
    h = ad::leaky_relu(ad::conv_transpose_4x4(map, b.latent_weight.value, b.latent_bias.value),
                       slope);
    trace_row(trace, k, "Conv 4x4", "LReLU", h.shape());
  } else {
    h = ad::upsample_nearest_2x(x);
    trace_row(trace, k, "Upsample", "-", h.shape());
    h = ad::leaky_relu(b.conv_a.forward(h), slope);
    trace_row(trace, k, "Conv 3x3", "LReLU", h.shape());
  }
  h = ad::leaky_relu(b.conv_b.forward(h), slope);
  trace_row(trace, k, "Conv 3x3", "LReLU", h.shape());
  return h;
}

ImagePyramid Generator::forward(const Tensor& z, ShapeTrace* trace) const {
  if (z.rank() != 2 || z.dim(1) != spec_.latent_dim) {
    throw std::invalid_argument("generator: expected latents N×" +
                                std::to_string(spec_.latent_dim) + ", got " +
                                shape_str(z.shape()));
  }
  ImagePyramid out;
  out.reserve(blocks_.size());
  Tensor h = z;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    h = run_block(i, h, trace);
    Tensor rgb = blocks_[i].to_rgb.forward(h);
    trace_row(trace, static_cast<int>(i) + 1, "toRGB 1x1", "-", rgb.shape(), true);
    out.push_back(std::move(rgb));
  }
  return out;
}

Tensor Generator::block_output(const Tensor& z, int k) const {
  if (k < 1 || k > spec_.depth) throw std::out_of_range("generator block index");
  Tensor h = z;
  for (int i = 0; i < k; ++i) h = run_block(static_cast<std::size_t>(i), h, nullptr);
  return h;
}

ShapeTrace Generator::shape_trace() const {
  ShapeTrace t;
  Shape s;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    const int k = static_cast<int>(i) + 1;
    if (i == 0) {
      s = {1, b.latent_weight.shape()[0], 1, 1};
      trace_row(&t, k, "Latent vector", "Norm", s);
      s = {1, b.latent_weight.shape()[1], 4, 4};
      trace_row(&t, k, "Conv 4x4", "LReLU", s);
    } else {
      s = {1, s[1], 2 * s[2], 2 * s[3]};
      trace_row(&t, k, "Upsample", "-", s);
      s = b.conv_a.output_shape(s);
      trace_row(&t, k, "Conv 3x3", "LReLU", s);
    }
    s = b.conv_b.output_shape(s);
    trace_row(&t, k, "Conv 3x3", "LReLU", s);
    trace_row(&t, k, "toRGB 1x1", "-", b.to_rgb.output_shape(s), true);
  }
  return t;
}

ParameterRefs Generator::parameters() {
  ParameterRefs out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    if (i == 0) {
      out.push_back(&b.latent_weight);
      out.push_back(&b.latent_bias);
    } else {
      b.conv_a.collect(out);
    }
    b.conv_b.collect(out);
    b.to_rgb.collect(out);
  }
  return out;
}

std::int64_t Generator::parameter_count() const {
  return count_elements(const_cast<Generator*>(this)->parameters());
}

// -------------------------------------------------------------- discriminator

Discriminator::Discriminator(DiscriminatorSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(seed);
  const auto dt = spec_.dtype;
  const bool eq = spec_.equalized_lr;
  const auto& sched = spec_.schedule;
  for (int k = spec_.depth; k >= 1; --k) {
    Block b;
    b.scale = k;
    b.resolution = block_resolution(k);
    b.entry = k == spec_.depth;
    b.final = k == 1;
    const std::string name = "block" + std::to_string(spec_.depth - k + 1);
    const auto c = sched[static_cast<std::size_t>(k - 1)];
    std::int64_t in = 0;
    if (b.entry) {
      const auto rgb_out = spec_.from_rgb_channels();
      b.from_rgb = Conv2dLayer::create(name + "/from_rgb", 3, rgb_out, 1, 1, 0, true, rng, dt, eq);
      in = rgb_out + 1;
    } else {
      in = c + 3 + 1;
    }
    b.conv_a = Conv2dLayer::create(name + "/conv3x3_a", in, c, 3, 1, 1, true, rng, dt, eq);
    if (b.final) {
      b.conv_b = Conv2dLayer::create(name + "/conv4x4", c, c, 4, 1, 0, true, rng, dt, eq);
      b.head = DenseLayer::create(name + "/fc", c, 1, rng, dt, eq);
    } else {
      const auto next = sched[static_cast<std::size_t>(k - 2)];
      b.conv_b = Conv2dLayer::create(name + "/conv3x3_b", c, next, 3, 1, 1, true, rng, dt, eq);
    }
    blocks_.push_back(std::move(b));
  }
}

void Discriminator::check_pyramid(const ImagePyramid& pyramid) const {
  if (static_cast<int>(pyramid.size()) != spec_.depth) {
    throw std::invalid_argument("discriminator: pyramid has " + std::to_string(pyramid.size()) +
                                " scales, expected " + std::to_string(spec_.depth));
  }
  const auto n = pyramid.front().rank() == 4 ? pyramid.front().dim(0) : -1;
  for (int k = 1; k <= spec_.depth; ++k) {
    const auto& t = pyramid[static_cast<std::size_t>(k - 1)];
    const auto r = block_resolution(k);
    if (t.shape() != Shape{n, 3, r, r}) {
      throw std::invalid_argument("discriminator: scale " + std::to_string(k) + " has shape " +
                                  shape_str(t.shape()) + ", expected " +
                                  shape_str({n, 3, r, r}));
    }
    if (t.dtype() != spec_.dtype) {
      throw std::invalid_argument("discriminator: pyramid dtype does not match the network");
    }
  }
}

Tensor Discriminator::forward(const ImagePyramid& pyramid, ShapeTrace* trace) const {
  check_pyramid(pyramid);
  const double slope = spec_.leaky_slope;
  Tensor h;
  int index = 0;
  for (const auto& b : blocks_) {
    ++index;
    const Tensor& rgb = pyramid[static_cast<std::size_t>(b.scale - 1)];
    trace_row(trace, index, "Raw RGB images", "-", rgb.shape());
    if (b.entry) {
      h = b.from_rgb.forward(rgb);
      trace_row(trace, index, "FromRGB", "-", h.shape());
    } else {
      h = combine_phi_simple(h, rgb);
      trace_row(trace, index, "Concat/phi_simple", "-", h.shape());
    }
    h = ad::minibatch_stddev(h, spec_.mbstd_eps);
    trace_row(trace, index, "MiniBatchStd", "-", h.shape());
    h = ad::leaky_relu(b.conv_a.forward(h), slope);
    trace_row(trace, index, "Conv 3x3", "LReLU", h.shape());
    h = ad::leaky_relu(b.conv_b.forward(h), slope);
    trace_row(trace, index, b.final ? "Conv 4x4" : "Conv 3x3", "LReLU", h.shape());
    if (!b.final) {
      h = ad::avg_pool_2x2(h);
      trace_row(trace, index, "AvgPool", "-", h.shape());
    } else {
      h = b.head.forward(ad::reshape(h, {h.dim(0), h.dim(1)}));
      trace_row(trace, index, "Fully Connected", "Linear", {h.dim(0), 1, 1, 1});
    }
  }
  return h;
}

ShapeTrace Discriminator::shape_trace() const {
  ShapeTrace t;
  Shape s;
  int index = 0;
  for (const auto& b : blocks_) {
    ++index;
    const Shape rgb{1, 3, b.resolution, b.resolution};
    trace_row(&t, index, "Raw RGB images", "-", rgb);
    if (b.entry) {
      s = b.from_rgb.output_shape(rgb);
      trace_row(&t, index, "FromRGB", "-", s);
    } else {
      s = {1, s[1] + 3, s[2], s[3]};
      trace_row(&t, index, "Concat/phi_simple", "-", s);
    }
    s = {1, s[1] + 1, s[2], s[3]};
    trace_row(&t, index, "MiniBatchStd", "-", s);
    s = b.conv_a.output_shape(s);
    trace_row(&t, index, "Conv 3x3", "LReLU", s);
    s = b.conv_b.output_shape(s);
    trace_row(&t, index, b.final ? "Conv 4x4" : "Conv 3x3", "LReLU", s);
    if (!b.final) {
      s = {1, s[1], s[2] / 2, s[3] / 2};
      trace_row(&t, index, "AvgPool", "-", s);
    } else {
      trace_row(&t, index, "Fully Connected", "Linear", {1, b.head.weight.shape()[1], 1, 1});
    }
  }
  return t;
}

ParameterRefs Discriminator::parameters() {
  ParameterRefs out;
  for (auto& b : blocks_) {
    if (b.entry) b.from_rgb.collect(out);
    b.conv_a.collect(out);
    b.conv_b.collect(out);
    if (b.final) b.head.collect(out);
  }
  return out;
}

std::int64_t Discriminator::parameter_count() const {
  return count_elements(const_cast<Discriminator*>(this)->parameters());
}

Generator build_generator(const GeneratorSpec& spec, std::uint64_t seed) {
  return Generator(spec, seed);
}

Discriminator build_discriminator(const DiscriminatorSpec& spec, std::uint64_t seed) {
  return Discriminator(spec, seed);
}

}  // namespace msggan::net
