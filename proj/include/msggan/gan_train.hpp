#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "msggan/msggan_net.hpp"

namespace msggan::gan {

using net::ImagePyramid;

struct GanTrainingConfig {
  double learning_rate = 3e-4;
  double rmsprop_decay = 0.9;
  double rmsprop_eps = 1e-8;
  double gp_lambda = 10.0;
  int critic_iters = 1;
  int batch_size = 16;
  std::int64_t total_steps = 1000;
  std::uint64_t seed = 0;
  std::int64_t sample_every = 0;      // 0 disables sample grids
  std::int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate() const;
};

// Raised when a loss or gradient stops being finite. Parameters are left as
// they were before the offending step.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RmsPropOptions {
  double learning_rate = 3e-4;
  double decay = 0.9;
  double eps = 1e-8;
};

// Per-parameter running average of squared gradients.
struct RmsPropState {
  std::vector<Tensor> cache;
};

// cache <- decay·cache + (1-decay)·g²;  param <- param - lr·g / (sqrt(cache) + eps).
// Every gradient is checked before any parameter changes.
void rmsprop_step(const ParameterRefs& params, const std::vector<Tensor>& grads,
                  RmsPropState& state, const RmsPropOptions& options);

using Critic = std::function<Tensor(const ImagePyramid&)>;

// λ·mean_n (||∇_x̂ D(x̂)||₂ − 1)² with x̂ = ε·real + (1−ε)·fake, one ε per
// sample shared by every scale; the norm spans all scales of a sample. The
// result is graph-linked to the critic's parameters.
Tensor gradient_penalty(const Critic& critic, const ImagePyramid& real, const ImagePyramid& fake,
                        double lambda, Rng& rng);

struct WganLosses {
  Tensor d_loss;  // mean(d_fake) − mean(d_real) + gp
  Tensor g_loss;  // −mean(d_fake)
};
WganLosses wgan_losses(const Tensor& d_real, const Tensor& d_fake, const Tensor& gp);

struct StepTelemetry {
  std::int64_t step = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double gp = 0.0;
  double d_grad_norm = 0.0;
  double g_grad_norm = 0.0;
};

struct TrainState {
  TrainState(const net::GeneratorSpec& gspec, const net::DiscriminatorSpec& dspec,
             std::uint64_t seed);

  std::uint64_t seed;
  std::int64_t step = 0;
  net::Generator generator;
  net::Discriminator discriminator;
  RmsPropState generator_opt;
  RmsPropState discriminator_opt;
  Rng rng;
};

// critic_iters discriminator updates (fresh latents each), then one generator
// update. Throws NonFiniteError on a non-finite loss or gradient.
StepTelemetry train_step(TrainState& state, const ImagePyramid& real,
                         const GanTrainingConfig& config);

// N×latent_dim standard-normal latents drawn from rng.
Tensor sample_latents(std::int64_t n, std::int64_t dim, Rng& rng, DType dt);
// Clamp to [-1,1], then round((v+1)·127.5).
std::uint8_t pixel_byte(double v);

// Finest-scale samples arranged n_rows × n_cols, clamped to [-1,1] and mapped
// to 8-bit by (x+1)·127.5.
void emit_sample_grid(const net::Generator& generator, int n_rows, int n_cols,
                      std::uint64_t seed, const std::filesystem::path& path);

// Writes manifest, parameters, optimizer accumulators and RNG state.
void save_checkpoint(const TrainState& state, const std::filesystem::path& dir);
// Restores into `state`; the stored specs must equal the state's specs.
// Nothing is modified unless every array validates.
void load_checkpoint(TrainState& state, const std::filesystem::path& dir);
// Rebuilds a state from the specs recorded in the manifest.
TrainState load_checkpoint(const std::filesystem::path& dir);

std::string format_telemetry_row(const StepTelemetry& t);
inline constexpr const char* kTelemetryHeader = "step,d_loss,g_loss,gp";

}  // namespace msggan::gan
