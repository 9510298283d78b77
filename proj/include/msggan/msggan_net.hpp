#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msggan/nn.hpp"

// Multi-scale gradient GAN networks.
//
// The generator emits one RGB image per block through a 1×1 "toRGB"
// convolution; the discriminator consumes those images in reverse order,
// concatenating each scale onto its feature maps before the block that works
// at that resolution. Gradients from the critic therefore reach every
// generator block directly through its own RGB tap.
namespace msggan::net {

// Main-path channel count per generator block, coarsest (4×4) first.
using ChannelSchedule = std::vector<std::int64_t>;

// The nine-block schedule of the full 1024×1024 model.
ChannelSchedule full_schedule();
// Its first `depth` entries.
ChannelSchedule full_schedule(int depth);

// Resolution of generator block k (1-based): 4·2^(k-1).
std::int64_t block_resolution(int k);

struct GeneratorSpec {
  std::int64_t latent_dim = 512;
  int depth = 5;
  ChannelSchedule schedule = full_schedule(5);
  double leaky_slope = 0.2;
  bool equalized_lr = false;
  DType dtype = DType::F32;

  static GeneratorSpec standard(int depth);
  void validate() const;
  std::int64_t output_resolution() const { return block_resolution(depth); }
  bool operator==(const GeneratorSpec&) const = default;
};

struct DiscriminatorSpec {
  int depth = 5;
  // Same orientation as the generator's schedule (coarsest first).
  ChannelSchedule schedule = full_schedule(5);
  // Channels produced by fromRGB at the finest scale; 0 means schedule.back().
  std::int64_t entry_from_rgb_channels = 0;
  double leaky_slope = 0.2;
  double mbstd_eps = 1e-8;
  bool equalized_lr = false;
  DType dtype = DType::F32;

  static DiscriminatorSpec standard(int depth);
  static DiscriminatorSpec matching(const GeneratorSpec& g);
  std::int64_t from_rgb_channels() const;
  void validate() const;
  bool operator==(const DiscriminatorSpec&) const = default;
};

// RGB images, coarsest (4×4) first, each N×3×r×r.
using ImagePyramid = std::vector<Tensor>;

struct ShapeRow {
  int block = 0;
  std::string op;
  std::string activation;
  Shape shape;  // C×H×W
  bool rgb_tap = false;  // generator toRGB output, not part of the main path
};
using ShapeTrace = std::vector<ShapeRow>;

// Rescales each latent row to Euclidean norm sqrt(d).
Tensor latent_normalize(const Tensor& z);

// Combine function: channel concatenation, features first, then RGB.
Tensor combine_phi_simple(const Tensor& features, const Tensor& rgb);

class Generator {
 public:
  Generator(GeneratorSpec spec, std::uint64_t seed);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) = default;
  Generator& operator=(Generator&&) = default;

  const GeneratorSpec& spec() const { return spec_; }

  // z: N×latent_dim. Returns one RGB image per block. When `trace` is given,
  // every main-path activation and RGB tap is appended to it.
  ImagePyramid forward(const Tensor& z, ShapeTrace* trace = nullptr) const;

  // Walks the built layers and reports each activation shape without
  // evaluating any convolution.
  ShapeTrace shape_trace() const;

  ParameterRefs parameters();
  std::int64_t parameter_count() const;
  // Main-path output of block k (1-based) for the given latents.
  Tensor block_output(const Tensor& z, int k) const;

 private:
  struct Block {
    std::int64_t channels = 0;
    Parameter latent_weight;  // first block: latent×C×4×4
    Parameter latent_bias;
    Conv2dLayer conv_a;  // later blocks only
    Conv2dLayer conv_b;
    Conv2dLayer to_rgb;
  };

  Tensor run_block(std::size_t index, const Tensor& x, ShapeTrace* trace) const;

  GeneratorSpec spec_;
  std::vector<Block> blocks_;
};

class Discriminator {
 public:
  Discriminator(DiscriminatorSpec spec, std::uint64_t seed);
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;
  Discriminator(Discriminator&&) = default;
  Discriminator& operator=(Discriminator&&) = default;

  const DiscriminatorSpec& spec() const { return spec_; }

  // One unbounded critic score per sample (N×1).
  Tensor forward(const ImagePyramid& pyramid, ShapeTrace* trace = nullptr) const;
  ShapeTrace shape_trace() const;

  ParameterRefs parameters();
  std::int64_t parameter_count() const;

  // Blocks from the finest scale to the coarsest; exposed for ablation tests.
  struct Block {
    int scale = 0;             // generator block index k served by this block
    std::int64_t resolution = 0;
    bool entry = false;
    bool final = false;
    Conv2dLayer from_rgb;      // entry only
    Conv2dLayer conv_a;        // 3×3 after MiniBatchStd
    Conv2dLayer conv_b;        // 3×3, or 4×4 valid in the final block
    DenseLayer head;           // final only
  };
  std::vector<Block>& blocks() { return blocks_; }

 private:
  void check_pyramid(const ImagePyramid& pyramid) const;

  DiscriminatorSpec spec_;
  std::vector<Block> blocks_;
};

Generator build_generator(const GeneratorSpec& spec, std::uint64_t seed);
Discriminator build_discriminator(const DiscriminatorSpec& spec, std::uint64_t seed);

}  // namespace msggan::net
