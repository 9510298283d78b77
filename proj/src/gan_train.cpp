#include "msggan/gan_train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "msggan/checkpoint_io.hpp"
#include "msggan/ops.hpp"
#include "msggan/png_io.hpp"

namespace msggan::gan {

namespace fs = std::filesystem;
using namespace msggan::ad;

void GanTrainingConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("GanTrainingConfig: ") + what);
  };
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "learning_rate must be >= 0");
  require(rmsprop_decay > 0.0 && rmsprop_decay < 1.0, "rmsprop_decay must lie in (0,1)");
  require(rmsprop_eps >= 0.0, "rmsprop_eps must be >= 0");
  require(gp_lambda >= 0.0, "gp_lambda must be >= 0");
  require(critic_iters >= 1, "critic_iters must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(total_steps >= 0, "total_steps must be >= 0");
  require(sample_every >= 0 && checkpoint_every >= 0, "intervals must be >= 0");
}

namespace {

bool all_finite(const Tensor& t) {
  return dispatch(t.dtype(), [&]<class T>() {
    for (T v : t.data<T>()) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  });
}

double l2_norm(const std::vector<Tensor>& grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    dispatch(g.dtype(), [&]<class T>() {
      for (T v : g.data<T>()) s += static_cast<double>(v) * static_cast<double>(v);
    });
  }
  return std::sqrt(s);
}

}  // namespace

Tensor sample_latents(std::int64_t n, std::int64_t dim, Rng& rng, DType dt) {
  std::vector<double> v(static_cast<std::size_t>(n * dim));
  for (auto& x : v) x = rng.normal();
  return Tensor::from_vector({n, dim}, v, dt);
}

std::uint8_t pixel_byte(double v) {
  return static_cast<std::uint8_t>(std::lround((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5));
}

void rmsprop_step(const ParameterRefs& params, const std::vector<Tensor>& grads,
                  RmsPropState& state, const RmsPropOptions& options) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("rmsprop_step: parameter and gradient counts differ");
  }
  if (!state.cache.empty() && state.cache.size() != params.size()) {
    throw std::invalid_argument("rmsprop_step: optimizer state does not match parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->shape() || grads[i].dtype() != params[i]->value.dtype()) {
      throw std::invalid_argument("rmsprop_step: gradient shape mismatch for " + params[i]->name);
    }
    if (!all_finite(grads[i])) {
      throw NonFiniteError("rmsprop_step: non-finite gradient for " + params[i]->name);
    }
  }
  if (state.cache.empty()) {
    for (const auto* p : params) state.cache.push_back(Tensor::zeros(p->shape(), p->value.dtype()));
  }
  const double a = options.decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    dispatch(params[i]->value.dtype(), [&]<class T>() {
      auto w = params[i]->value.mutable_data<T>();
      auto c = state.cache[i].mutable_data<T>();
      auto g = grads[i].data<T>();
      const T decay = static_cast<T>(a);
      const T keep = static_cast<T>(1.0 - a);
      const T lr = static_cast<T>(options.learning_rate);
      const T eps = static_cast<T>(options.eps);
      for (std::size_t j = 0; j < w.size(); ++j) {
        c[j] = decay * c[j] + keep * g[j] * g[j];
        w[j] -= lr * g[j] / (std::sqrt(c[j]) + eps);
      }
    });
  }
}

Tensor gradient_penalty(const Critic& critic, const ImagePyramid& real, const ImagePyramid& fake,
                        double lambda, Rng& rng) {
  if (real.size() != fake.size() || real.empty()) {
    throw std::invalid_argument("gradient_penalty: real and fake pyramids differ in depth");
  }
  if (lambda < 0.0) throw std::invalid_argument("gradient_penalty: lambda must be >= 0");
  const std::int64_t n = real[0].dim(0);
  const DType dt = real[0].dtype();
  for (std::size_t s = 0; s < real.size(); ++s) {
    if (real[s].shape() != fake[s].shape() || real[s].dim(0) != n || fake[s].dtype() != dt ||
        real[s].dtype() != dt) {
      throw std::invalid_argument("gradient_penalty: scale " + std::to_string(s) +
                                  " has mismatched shape or dtype");
    }
  }
  // The penalty is itself an objective for the critic, so the inner gradient
  // is always recorded even when the caller has grad mode off.
  EnableGradGuard enable(true);
  std::vector<double> eps(static_cast<std::size_t>(n));
  for (auto& e : eps) e = rng.uniform();

  ImagePyramid mixed;
  for (std::size_t s = 0; s < real.size(); ++s) {
    Shape eshape(real[s].shape().size(), 1);
    eshape[0] = n;
    const Tensor e = Tensor::from_vector(eshape, eps, dt);
    Tensor x;
    {
      NoGradGuard no_grad;
      x = add(mul(e, real[s].detach()), mul(add_scalar(neg(e), 1.0), fake[s].detach()));
    }
    x.set_requires_grad(true);
    mixed.push_back(x);
  }
  const Tensor scores = critic(mixed);
  const auto grads = grad(sum(scores), std::span<const Tensor>(mixed), /*create_graph=*/true);

  Tensor squared;
  for (const auto& g : grads) {
    Shape per_sample(g.shape().size(), 1);
    per_sample[0] = n;
    Tensor term = reshape(sum_to(square(g), per_sample), {n});
    squared = squared.defined() ? add(squared, term) : term;
  }
  return scale(mean(square(add_scalar(sqrt(squared), -1.0))), lambda);
}

WganLosses wgan_losses(const Tensor& d_real, const Tensor& d_fake, const Tensor& gp) {
  if (d_real.shape() != d_fake.shape()) {
    throw std::invalid_argument("wgan_losses: d_real and d_fake batch sizes differ");
  }
  WganLosses out;
  out.d_loss = add(sub(mean(d_fake), mean(d_real)), gp);
  out.g_loss = neg(mean(d_fake));
  return out;
}

TrainState::TrainState(const net::GeneratorSpec& gspec, const net::DiscriminatorSpec& dspec,
                       std::uint64_t seed_)
    : seed(seed_),
      generator(gspec, mix_seed(seed_, 1)),
      discriminator(dspec, mix_seed(seed_, 2)),
      rng(mix_seed(seed_, 3)) {}

StepTelemetry train_step(TrainState& state, const ImagePyramid& real,
                         const GanTrainingConfig& config) {
  config.validate();
  auto& G = state.generator;
  auto& D = state.discriminator;
  if (real.size() != static_cast<std::size_t>(G.spec().depth)) {
    throw std::invalid_argument("train_step: real pyramid depth does not match the model");
  }
  const std::int64_t n = real[0].dim(0);
  const DType dt = G.spec().dtype;
  const RmsPropOptions opts{config.learning_rate, config.rmsprop_decay, config.rmsprop_eps};
  const Critic critic = [&D](const ImagePyramid& x) { return D.forward(x); };

  StepTelemetry t;
  t.step = state.step;
  auto fail = [&](const std::string& what) {
    std::ostringstream msg;
    msg << "non-finite " << what << " at step " << state.step << " (d_loss=" << t.d_loss
        << ", g_loss=" << t.g_loss << ", gp=" << t.gp << ")";
    throw NonFiniteError(msg.str());
  };

  const ParameterRefs d_params = only_trainable(D.parameters());
  for (int it = 0; it < config.critic_iters; ++it) {
    const Tensor z = sample_latents(n, G.spec().latent_dim, state.rng, dt);
    ImagePyramid fake;
    {
      NoGradGuard no_grad;
      fake = G.forward(z);
    }
    const Tensor d_real = D.forward(real);
    const Tensor d_fake = D.forward(fake);
    const Tensor gp = gradient_penalty(critic, real, fake, config.gp_lambda, state.rng);
    const WganLosses losses = wgan_losses(d_real, d_fake, gp);
    t.d_loss = losses.d_loss.item();
    t.gp = gp.item();
    if (!std::isfinite(t.d_loss) || !std::isfinite(t.gp)) fail("discriminator loss");
    const auto grads = compute_gradients(losses.d_loss, d_params);
    t.d_grad_norm = l2_norm(grads);
    if (!std::isfinite(t.d_grad_norm)) fail("discriminator gradient");
    rmsprop_step(d_params, grads, state.discriminator_opt, opts);
  }

  const ParameterRefs g_params = only_trainable(G.parameters());
  const Tensor z = sample_latents(n, G.spec().latent_dim, state.rng, dt);
  const Tensor g_loss = neg(mean(D.forward(G.forward(z))));
  t.g_loss = g_loss.item();
  if (!std::isfinite(t.g_loss)) fail("generator loss");
  const auto grads = compute_gradients(g_loss, g_params);
  t.g_grad_norm = l2_norm(grads);
  if (!std::isfinite(t.g_grad_norm)) fail("generator gradient");
  rmsprop_step(g_params, grads, state.generator_opt, opts);
  ++state.step;
  return t;
}

void emit_sample_grid(const net::Generator& generator, int n_rows, int n_cols, std::uint64_t seed,
                      const fs::path& path) {
  if (n_rows < 1 || n_cols < 1) throw std::invalid_argument("emit_sample_grid: empty grid");
  Rng rng(seed);
  const std::int64_t count = static_cast<std::int64_t>(n_rows) * n_cols;
  const Tensor z = sample_latents(count, generator.spec().latent_dim, rng, generator.spec().dtype);
  Tensor images;
  {
    NoGradGuard no_grad;
    images = generator.forward(z).back();
  }
  const auto r = images.dim(2);
  png::Image grid;
  grid.width = static_cast<int>(r * n_cols);
  grid.height = static_cast<int>(r * n_rows);
  grid.rgb.assign(static_cast<std::size_t>(grid.width) * grid.height * 3, 0);
  const auto v = images.to_vector();
  for (std::int64_t i = 0; i < count; ++i) {
    const std::int64_t gy = (i / n_cols) * r;
    const std::int64_t gx = (i % n_cols) * r;
    for (int c = 0; c < 3; ++c) {
      for (std::int64_t y = 0; y < r; ++y) {
        for (std::int64_t x = 0; x < r; ++x) {
          const auto px = static_cast<std::size_t>(((gy + y) * grid.width + gx + x) * 3 + c);
          grid.rgb[px] = pixel_byte(v[static_cast<std::size_t>(((i * 3 + c) * r + y) * r + x)]);
        }
      }
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png::write(path, grid);
}

// ---- checkpoints ----

namespace {

using ckpt::exact;
using ckpt::field;
using ckpt::Manifest;
using ckpt::read_array;
using ckpt::read_manifest;
using ckpt::write_array;

std::string join_schedule(const net::ChannelSchedule& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out;
}

net::ChannelSchedule parse_schedule(const std::string& text) {
  net::ChannelSchedule out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoll(item));
  return out;
}

void write_specs(std::ostream& os, const net::GeneratorSpec& g, const net::DiscriminatorSpec& d) {
  os << "generator.latent_dim=" << g.latent_dim << "\n"
     << "generator.depth=" << g.depth << "\n"
     << "generator.schedule=" << join_schedule(g.schedule) << "\n"
     << "generator.leaky_slope=" << exact(g.leaky_slope) << "\n"
     << "generator.equalized_lr=" << g.equalized_lr << "\n"
     << "discriminator.depth=" << d.depth << "\n"
     << "discriminator.schedule=" << join_schedule(d.schedule) << "\n"
     << "discriminator.entry_from_rgb_channels=" << d.entry_from_rgb_channels << "\n"
     << "discriminator.leaky_slope=" << exact(d.leaky_slope) << "\n"
     << "discriminator.mbstd_eps=" << exact(d.mbstd_eps) << "\n"
     << "discriminator.equalized_lr=" << d.equalized_lr << "\n"
     << "dtype=" << dtype_name(g.dtype) << "\n";
}

std::pair<net::GeneratorSpec, net::DiscriminatorSpec> read_specs(const Manifest& m) {
  net::GeneratorSpec g;
  g.latent_dim = std::stoll(field(m, "generator.latent_dim"));
  g.depth = std::stoi(field(m, "generator.depth"));
  g.schedule = parse_schedule(field(m, "generator.schedule"));
  g.leaky_slope = std::stod(field(m, "generator.leaky_slope"));
  g.equalized_lr = field(m, "generator.equalized_lr") == "1";
  g.dtype = parse_dtype(field(m, "dtype"));
  net::DiscriminatorSpec d;
  d.depth = std::stoi(field(m, "discriminator.depth"));
  d.schedule = parse_schedule(field(m, "discriminator.schedule"));
  d.entry_from_rgb_channels = std::stoll(field(m, "discriminator.entry_from_rgb_channels"));
  d.leaky_slope = std::stod(field(m, "discriminator.leaky_slope"));
  d.mbstd_eps = std::stod(field(m, "discriminator.mbstd_eps"));
  d.equalized_lr = field(m, "discriminator.equalized_lr") == "1";
  d.dtype = g.dtype;
  return {g, d};
}

struct Group {
  std::string prefix;
  ParameterRefs params;
  RmsPropState* opt;
};

std::vector<Group> groups_of(TrainState& state) {
  return {{"generator", state.generator.parameters(), &state.generator_opt},
          {"discriminator", state.discriminator.parameters(), &state.discriminator_opt}};
}

}  // namespace

void save_checkpoint(const TrainState& state_in, const fs::path& dir) {
  auto& state = const_cast<TrainState&>(state_in);
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "format=msggan-checkpoint-1\n"
           << "seed=" << state.seed << "\n"
           << "step=" << state.step << "\n";
  write_specs(manifest, state.generator.spec(), state.discriminator.spec());
  for (auto& g : groups_of(state)) {
    manifest << g.prefix << ".optimizer_initialized=" << !g.opt->cache.empty() << "\n";
    for (std::size_t i = 0; i < g.params.size(); ++i) {
      const auto* p = g.params[i];
      manifest << "array." << g.prefix << "/" << p->name << "=" << shape_str(p->shape()) << "\n";
      write_array(dir / "params" / g.prefix / (p->name + ".bin"), p->value);
      if (!g.opt->cache.empty()) {
        write_array(dir / "rmsprop" / g.prefix / (p->name + ".bin"), g.opt->cache.at(i));
      }
    }
  }
  std::ofstream(dir / "rng_state.txt", std::ios::trunc) << state.rng.state() << "\n";
  std::ofstream out(dir / "manifest.txt", std::ios::trunc);
  out << manifest.str();
  if (!out) throw std::runtime_error("checkpoint: cannot write manifest in " + dir.string());
}

void load_checkpoint(TrainState& state, const fs::path& dir) {
  const Manifest m = read_manifest(dir / "manifest.txt");
  if (field(m, "format") != "msggan-checkpoint-1") {
    throw std::runtime_error("checkpoint: unsupported format " + field(m, "format"));
  }
  const auto [gspec, dspec] = read_specs(m);
  if (!(gspec == state.generator.spec()) || !(dspec == state.discriminator.spec())) {
    throw std::runtime_error("checkpoint: stored network specs do not match the target state");
  }

  // Stage everything, then commit, so a bad file leaves the state untouched.
  struct Staged {
    std::vector<Tensor> values;
    std::vector<Tensor> cache;
  };
  auto groups = groups_of(state);
  std::vector<Staged> staged(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    const bool has_opt = field(m, g.prefix + ".optimizer_initialized") == "1";
    for (const auto* p : g.params) {
      const std::string key = "array." + g.prefix + "/" + p->name;
      if (field(m, key) != shape_str(p->shape())) {
        throw std::runtime_error("checkpoint: shape mismatch for " + key);
      }
      const DType dt = p->value.dtype();
      staged[gi].values.push_back(read_array(dir / "params" / g.prefix / (p->name + ".bin"),
                                             p->shape(), dt));
      if (has_opt) {
        staged[gi].cache.push_back(read_array(dir / "rmsprop" / g.prefix / (p->name + ".bin"),
                                              p->shape(), dt));
      }
    }
  }
  std::ifstream rng_in(dir / "rng_state.txt");
  std::string rng_text((std::istreambuf_iterator<char>(rng_in)), std::istreambuf_iterator<char>());
  if (!rng_in.good() && rng_text.empty()) throw std::runtime_error("checkpoint: missing rng_state");
  Rng rng;
  rng.set_state(rng_text);
  const auto step = std::stoll(field(m, "step"));
  const auto seed = std::stoull(field(m, "seed"));

  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    auto& g = groups[gi];
    for (std::size_t i = 0; i < g.params.size(); ++i) {
      auto* p = g.params[i];
      p->value = staged[gi].values[i];
      p->value.set_requires_grad(p->trainable);
      p->grad = Tensor::zeros(p->shape(), p->value.dtype());
    }
    g.opt->cache = std::move(staged[gi].cache);
  }
  state.rng = rng;
  state.step = step;
  state.seed = seed;
}

TrainState load_checkpoint(const fs::path& dir) {
  const Manifest m = read_manifest(dir / "manifest.txt");
  const auto [gspec, dspec] = read_specs(m);
  TrainState state(gspec, dspec, std::stoull(field(m, "seed")));
  load_checkpoint(state, dir);
  return state;
}

std::string format_telemetry_row(const StepTelemetry& t) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g", static_cast<long long>(t.step), t.d_loss,
                t.g_loss, t.gp);
  return buf;
}

}  // namespace msggan::gan
