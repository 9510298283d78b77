#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "msggan/gan_train.hpp"
#include "msggan/png_io.hpp"

using namespace msggan;
using namespace msggan::gan;
namespace fs = std::filesystem;

namespace {

Tensor vec(const Shape& s, std::vector<double> v, DType dt = DType::F64) {
  return Tensor::from_vector(s, v, dt);
}

Tensor randn(const Shape& s, Rng& rng, DType dt = DType::F64) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& x : v) x = rng.normal();
  return Tensor::from_vector(s, v, dt);
}

net::GeneratorSpec small_g(int depth = 2, DType dt = DType::F32) {
  net::GeneratorSpec g;
  g.depth = depth;
  g.latent_dim = 8;
  g.schedule.assign(static_cast<std::size_t>(depth), 8);
  g.dtype = dt;
  return g;
}

ImagePyramid real_pyramid(std::int64_t n, int depth, std::uint64_t seed, DType dt = DType::F32) {
  Rng rng(seed);
  const auto r = net::block_resolution(depth);
  ImagePyramid p{Tensor()};
  p.resize(static_cast<std::size_t>(depth));
  p.back() = randn({n, 3, r, r}, rng, dt);
  for (int k = depth - 1; k >= 1; --k) {
    p[static_cast<std::size_t>(k - 1)] = ad::avg_pool_2x2(p[static_cast<std::size_t>(k)]);
  }
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::vector<double>> snapshot(TrainState& s) {
  std::vector<std::vector<double>> out;
  for (auto* p : s.generator.parameters()) out.push_back(p->value.to_vector());
  for (auto* p : s.discriminator.parameters()) out.push_back(p->value.to_vector());
  for (const auto& c : s.generator_opt.cache) out.push_back(c.to_vector());
  for (const auto& c : s.discriminator_opt.cache) out.push_back(c.to_vector());
  return out;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("msggan_test_gan_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("unit-gradient linear critic has zero penalty") {
  Rng rng(1);
  const ImagePyramid real{randn({3, 3, 4, 4}, rng), randn({3, 3, 8, 8}, rng)};
  const ImagePyramid fake{randn({3, 3, 4, 4}, rng), randn({3, 3, 8, 8}, rng)};
  // w spans both scales with total norm 1.
  Tensor w0 = randn({1, 3, 4, 4}, rng), w1 = randn({1, 3, 8, 8}, rng);
  const double norm = std::sqrt(ad::sum(ad::square(w0)).item() + ad::sum(ad::square(w1)).item());
  w0 = ad::scale(w0, 1.0 / norm);
  w1 = ad::scale(w1, 1.0 / norm);
  const Critic linear = [&](const ImagePyramid& x) {
    const Shape per{x[0].dim(0), 1, 1, 1};
    const Tensor s = ad::add(ad::sum_to(ad::mul(x[0], w0), per), ad::sum_to(ad::mul(x[1], w1), per));
    return ad::reshape(s, {x[0].dim(0), 1});
  };
  Rng eps(5);
  CHECK(std::abs(gradient_penalty(linear, real, fake, 10.0, eps).item()) < 1e-10);
}

TEST_CASE("constant-gradient critic penalty arithmetic") {
  const ImagePyramid real{vec({4, 1}, {0.1, 0.2, 0.3, 0.4})};
  const ImagePyramid fake{vec({4, 1}, {-1, -2, -3, -4})};
  const Critic twice = [](const ImagePyramid& x) { return ad::scale(x[0], 2.0); };
  Rng eps(2);
  CHECK(gradient_penalty(twice, real, fake, 10.0, eps).item() == doctest::Approx(10.0).epsilon(1e-14));
}

TEST_CASE("penalty is nonnegative and rejects mismatched pyramids") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = randn({1, 12}, rng), b = randn({12, 1}, rng);
    const Critic c = [&](const ImagePyramid& x) {
      return ad::matmul(ad::leaky_relu(ad::mul(ad::reshape(x[0], {x[0].dim(0), 12}), a)), b);
    };
    const ImagePyramid r{randn({2, 3, 2, 2}, rng)}, f{randn({2, 3, 2, 2}, rng)};
    CHECK(gradient_penalty(c, r, f, 10.0, rng).item() >= 0.0);
  }
  const Critic id = [](const ImagePyramid& x) { return x[0]; };
  const ImagePyramid one{vec({1, 1}, {1})};
  const ImagePyramid two{vec({1, 1}, {1}), vec({1, 1}, {1})};
  CHECK_THROWS_AS(gradient_penalty(id, one, two, 10.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(gradient_penalty(id, one, one, -1.0, rng), std::invalid_argument);
}

TEST_CASE("wgan loss arithmetic") {
  const Tensor gp0 = Tensor::scalar(0.0, DType::F64);
  const auto l = wgan_losses(vec({1, 1}, {1.0}), vec({1, 1}, {0.2}), gp0);
  CHECK(l.d_loss.item() == doctest::Approx(-0.8).epsilon(1e-15));
  CHECK(l.g_loss.item() == doctest::Approx(-0.2).epsilon(1e-15));
  const Tensor same = vec({3, 1}, {0.5, -1.0, 2.0});
  CHECK(wgan_losses(same, same, gp0).d_loss.item() == 0.0);
  CHECK_THROWS_AS(wgan_losses(vec({2, 1}, {1, 2}), vec({1, 1}, {1}), gp0), std::invalid_argument);
}

TEST_CASE("wasserstein term scales linearly with the critic") {
  Rng rng(4);
  const Tensor r = randn({5, 1}, rng), f = randn({5, 1}, rng);
  const Tensor gp0 = Tensor::scalar(0.0, DType::F64);
  const double base = wgan_losses(r, f, gp0).d_loss.item();
  CHECK(wgan_losses(ad::scale(r, 3.5), ad::scale(f, 3.5), gp0).d_loss.item() ==
        doctest::Approx(3.5 * base).epsilon(1e-13));
  // A constant shift cancels in the critic loss and only offsets g_loss.
  CHECK(wgan_losses(ad::add_scalar(r, 2.0), ad::add_scalar(f, 2.0), gp0).d_loss.item() ==
        doctest::Approx(base).epsilon(1e-13));
}

TEST_CASE("rmsprop update rule") {
  Parameter p("w", vec({1}, {0.5}));
  RmsPropState st;
  const RmsPropOptions opts{0.01, 0.9, 0.0};

  SUBCASE("zero gradient leaves the parameter alone") {
    RmsPropOptions eps_opts = opts;
    eps_opts.eps = 1e-8;
    rmsprop_step({&p}, {vec({1}, {0.0})}, st, eps_opts);
    CHECK(p.value.item() == 0.5);
  }
  SUBCASE("hand-evaluated first step") {
    rmsprop_step({&p}, {vec({1}, {1.0})}, st, opts);
    CHECK(st.cache[0].item() == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(p.value.item() - 0.5 == doctest::Approx(-0.031622776601683794).epsilon(1e-12));
  }
  SUBCASE("two steps agree with a scalar reference") {
    double w = 0.5, cache = 0.0;
    const double g = 0.7, lr = 0.01, a = 0.9, eps = 1e-8;
    RmsPropOptions o{lr, a, eps};
    for (int i = 0; i < 2; ++i) {
      cache = a * cache + (1 - a) * g * g;
      w -= lr * g / (std::sqrt(cache) + eps);
      rmsprop_step({&p}, {vec({1}, {g})}, st, o);
    }
    CHECK(std::abs(p.value.item() - w) < 1e-12);
    CHECK(std::abs(st.cache[0].item() - cache) < 1e-12);
  }
  SUBCASE("non-finite gradient aborts before any change") {
    Parameter q("q", vec({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(rmsprop_step({&p, &q}, {vec({1}, {1.0}), vec({2}, {1.0, NAN})}, st, opts),
                    NonFiniteError);
    CHECK(p.value.item() == 0.5);
    CHECK(st.cache.empty());
  }
}

TEST_CASE("train_step is deterministic and lr=0 is a no-op") {
  const auto g = small_g();
  const auto d = net::DiscriminatorSpec::matching(g);
  GanTrainingConfig cfg;
  cfg.batch_size = 4;
  cfg.critic_iters = 2;
  const auto real = real_pyramid(4, 2, 9);

  TrainState a(g, d, 42), b(g, d, 42);
  for (int i = 0; i < 3; ++i) {
    const auto ta = train_step(a, real, cfg);
    const auto tb = train_step(b, real, cfg);
    CHECK(ta.d_loss == tb.d_loss);
    CHECK(ta.g_loss == tb.g_loss);
  }
  CHECK(snapshot(a) == snapshot(b));
  CHECK(a.rng == b.rng);
  CHECK(a.step == 3);

  TrainState c(g, d, 7);
  const auto before = snapshot(c);
  cfg.learning_rate = 0.0;
  const auto t = train_step(c, real, cfg);
  CHECK(std::isfinite(t.d_loss));
  CHECK(std::isfinite(t.g_loss));
  CHECK(t.gp >= 0.0);
  auto after = snapshot(c);
  after.resize(before.size());  // drop the freshly created accumulators
  CHECK(after == before);
}

TEST_CASE("train_step rejects a pyramid of the wrong depth") {
  TrainState s(small_g(), net::DiscriminatorSpec::matching(small_g()), 1);
  CHECK_THROWS_AS(train_step(s, real_pyramid(2, 3, 1), GanTrainingConfig{}), std::invalid_argument);
}

TEST_CASE("sample grid geometry, determinism and value mapping") {
  const auto dir = scratch("grid");
  net::GeneratorSpec spec = small_g(5);
  spec.schedule.assign(5, 4);
  net::Generator g(spec, 3);
  emit_sample_grid(g, 4, 4, 11, dir / "a.png");
  emit_sample_grid(g, 4, 4, 11, dir / "b.png");
  const auto img = png::read(dir / "a.png");
  CHECK(img.width == 256);
  CHECK(img.height == 256);
  CHECK(slurp(dir / "a.png") == slurp(dir / "b.png"));

  // Force every output to -1 (and beyond): zero toRGB weights, negative bias.
  for (auto* p : g.parameters()) {
    if (p->name.find("to_rgb/weight") != std::string::npos) {
      p->value = Tensor::zeros(p->shape(), p->value.dtype());
    } else if (p->name.find("to_rgb/bias") != std::string::npos) {
      p->value = Tensor::full(p->shape(), -3.0, p->value.dtype());
    }
  }
  emit_sample_grid(g, 1, 2, 0, dir / "dark.png");
  const auto dark = png::read(dir / "dark.png");
  CHECK(dark.width == 128);
  CHECK(std::all_of(dark.rgb.begin(), dark.rgb.end(), [](auto v) { return v == 0; }));
  CHECK_THROWS(emit_sample_grid(g, 1, 1, 0, "/proc/no_such_dir/x.png"));
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip and resume") {
  const auto dir = scratch("ckpt");
  const auto g = small_g();
  const auto d = net::DiscriminatorSpec::matching(g);
  GanTrainingConfig cfg;
  cfg.batch_size = 4;
  const auto real = real_pyramid(4, 2, 5);

  TrainState run(g, d, 3);
  for (int i = 0; i < 3; ++i) train_step(run, real, cfg);
  save_checkpoint(run, dir / "one");

  SUBCASE("save-load-save is byte identical") {
    TrainState loaded = load_checkpoint(dir / "one");
    CHECK(loaded.step == 3);
    CHECK(snapshot(loaded) == snapshot(run));
    CHECK(loaded.rng == run.rng);
    save_checkpoint(loaded, dir / "two");
    for (const auto& e : fs::recursive_directory_iterator(dir / "one")) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), dir / "one");
      CHECK(slurp(e.path()) == slurp(dir / "two" / rel));
    }
  }
  SUBCASE("resumed run matches the uninterrupted one for ten steps") {
    TrainState resumed = load_checkpoint(dir / "one");
    for (int i = 0; i < 10; ++i) {
      const auto a = train_step(run, real, cfg);
      const auto b = train_step(resumed, real, cfg);
      CHECK(a.d_loss == b.d_loss);
      CHECK(a.g_loss == b.g_loss);
    }
    CHECK(snapshot(run) == snapshot(resumed));
  }
  SUBCASE("telemetry recomputed from a checkpoint matches the logged value") {
    const auto logged = train_step(run, real, cfg);
    TrainState again = load_checkpoint(dir / "one");
    const auto recomputed = train_step(again, real, cfg);
    CHECK(recomputed.d_loss + recomputed.g_loss ==
          doctest::Approx(logged.d_loss + logged.g_loss).epsilon(1e-6));
  }
  SUBCASE("mismatched spec is refused without touching the target") {
    auto other = small_g();
    other.schedule = {8, 6};
    TrainState target(other, net::DiscriminatorSpec::matching(other), 9);
    const auto before = snapshot(target);
    CHECK_THROWS(load_checkpoint(target, dir / "one"));
    CHECK(snapshot(target) == before);
  }
  SUBCASE("truncated array is reported and nothing is loaded") {
    const auto victim = dir / "one" / "params" / "discriminator" / "block2" / "fc" / "weight.bin";
    REQUIRE(fs::exists(victim));
    fs::resize_file(victim, fs::file_size(victim) - 4);
    TrainState target(g, d, 77);
    const auto before = snapshot(target);
    CHECK_THROWS_WITH_AS(load_checkpoint(target, dir / "one"), doctest::Contains("corrupted"),
                         std::runtime_error);
    CHECK(snapshot(target) == before);
    CHECK(target.step == 0);
  }
  fs::remove_all(dir);
}

TEST_CASE("telemetry row format") {
  StepTelemetry t;
  t.step = 12;
  t.d_loss = -0.5;
  t.g_loss = 0.25;
  t.gp = 1.0;
  CHECK(format_telemetry_row(t) == "12,-0.5,0.25,1");
  CHECK(std::string(kTelemetryHeader) == "step,d_loss,g_loss,gp");
}

TEST_CASE("config validation") {
  GanTrainingConfig c;
  CHECK_NOTHROW(c.validate());
  c.critic_iters = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.rmsprop_decay = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
