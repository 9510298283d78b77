#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "msggan/audit.hpp"
#include "msggan/msggan_net.hpp"

using namespace msggan;
using namespace msggan::net;

namespace {

Tensor randn(const Shape& s, std::uint64_t seed, DType dt = DType::F32) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& x : v) x = rng.normal();
  return Tensor::from_vector(s, v, dt);
}

GeneratorSpec narrow(int depth, DType dt = DType::F64) {
  GeneratorSpec g;
  g.depth = depth;
  g.latent_dim = 8;
  g.schedule.assign(static_cast<std::size_t>(depth), 6);
  g.dtype = dt;
  return g;
}

ImagePyramid random_pyramid(int depth, std::int64_t n, std::uint64_t seed, DType dt) {
  ImagePyramid p;
  for (int k = 1; k <= depth; ++k) {
    const auto r = block_resolution(k);
    p.push_back(randn({n, 3, r, r}, seed + static_cast<std::uint64_t>(k), dt));
  }
  return p;
}

// Parameter totals written out from the layer list, independent of the
// network code's bookkeeping.
std::int64_t expected_generator_params(const GeneratorSpec& s) {
  auto conv = [](std::int64_t in, std::int64_t out, std::int64_t k) { return in * out * k * k + out; };
  std::int64_t total = 0;
  for (int k = 1; k <= s.depth; ++k) {
    const auto c = s.schedule[static_cast<std::size_t>(k - 1)];
    if (k == 1) {
      total += s.latent_dim * c * 16 + c + conv(c, c, 3);
    } else {
      total += conv(s.schedule[static_cast<std::size_t>(k - 2)], c, 3) + conv(c, c, 3);
    }
    total += conv(c, 3, 1);
  }
  return total;
}

std::int64_t expected_discriminator_params(const DiscriminatorSpec& s) {
  auto conv = [](std::int64_t in, std::int64_t out, std::int64_t k) { return in * out * k * k + out; };
  std::int64_t total = 0;
  for (int k = s.depth; k >= 1; --k) {
    const auto c = s.schedule[static_cast<std::size_t>(k - 1)];
    std::int64_t in = c + 4;
    if (k == s.depth) {
      total += conv(3, s.from_rgb_channels(), 1);
      in = s.from_rgb_channels() + 1;
    }
    total += conv(in, c, 3);
    if (k == 1) {
      total += conv(c, c, 4) + c + 1;
    } else {
      total += conv(c, s.schedule[static_cast<std::size_t>(k - 2)], 3);
    }
  }
  return total;
}

}  // namespace

TEST_CASE("block resolutions double from 4x4") {
  CHECK(block_resolution(1) == 4);
  CHECK(block_resolution(5) == 64);
  CHECK(block_resolution(9) == 1024);
  CHECK(GeneratorSpec::standard(5).output_resolution() == 64);
  CHECK(GeneratorSpec::standard(9).output_resolution() == 1024);
}

TEST_CASE("latent normalization onto the sqrt(d) sphere") {
  std::vector<double> e1(512, 0.0);
  e1[0] = 1.0;
  const Tensor z = Tensor::from_vector({1, 512}, e1, DType::F64);
  const Tensor n = latent_normalize(z);
  CHECK(n.at(0) == doctest::Approx(22.627416997969522).epsilon(1e-15));
  CHECK(n.at(1) == 0.0);

  const Tensor r = randn({3, 16}, 4, DType::F64);
  const auto once = latent_normalize(r).to_vector();
  const auto twice = latent_normalize(latent_normalize(r)).to_vector();
  const auto scaled = latent_normalize(ad::scale(r, 7.25)).to_vector();
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(twice[i] == doctest::Approx(once[i]).epsilon(1e-14));
    CHECK(scaled[i] == doctest::Approx(once[i]).epsilon(1e-14));
  }
  CHECK_THROWS_AS(latent_normalize(Tensor::zeros({2, 4}, DType::F64)), std::invalid_argument);
}

TEST_CASE("combine function concatenates features before rgb") {
  const Tensor f = randn({2, 256, 4, 4}, 1);
  const Tensor rgb = randn({2, 3, 4, 4}, 2);
  const Tensor c = combine_phi_simple(f, rgb);
  CHECK(c.shape() == Shape{2, 259, 4, 4});
  CHECK(combine_phi_simple(randn({1, 512, 2, 2}, 3), randn({1, 3, 2, 2}, 4)).dim(1) == 515);
  CHECK(ad::slice_channels(c, 256, 259).to_vector() == rgb.to_vector());
  CHECK_THROWS(combine_phi_simple(f, randn({2, 3, 8, 8}, 5)));
}

TEST_CASE("standard depth-5 generator emits the five-scale pyramid") {
  const Generator g(GeneratorSpec::standard(5), 11);
  const ImagePyramid out = g.forward(randn({2, 512}, 12));
  REQUIRE(out.size() == 5);
  for (int k = 1; k <= 5; ++k) {
    const auto r = block_resolution(k);
    CHECK(out[static_cast<std::size_t>(k - 1)].shape() == Shape{2, 3, r, r});
  }
  CHECK(g.block_output(randn({1, 512}, 13), 3).shape() == Shape{1, 512, 16, 16});
}

TEST_CASE("depth-1 generator emits only the 4x4 image") {
  const Generator g(GeneratorSpec::standard(1), 1);
  const auto out = g.forward(randn({1, 512}, 2));
  REQUIRE(out.size() == 1);
  CHECK(out[0].shape() == Shape{1, 3, 4, 4});
}

TEST_CASE("identical latents give identical outputs at every scale") {
  const Generator g(narrow(4), 3);
  const auto zrow = randn({1, 8}, 4, DType::F64).to_vector();
  std::vector<double> both(zrow);
  both.insert(both.end(), zrow.begin(), zrow.end());
  const auto out = g.forward(Tensor::from_vector({2, 8}, both, DType::F64));
  for (const auto& img : out) {
    const auto v = img.to_vector();
    const std::size_t half = v.size() / 2;
    CHECK(std::equal(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(half),
                     v.begin() + static_cast<std::ptrdiff_t>(half)));
  }
}

TEST_CASE("parameter counts are a pure function of the spec") {
  for (int depth : {1, 2, 5}) {
    const auto gs = GeneratorSpec::standard(depth);
    const auto ds = DiscriminatorSpec::standard(depth);
    CHECK(Generator(gs, 0).parameter_count() == expected_generator_params(gs));
    CHECK(Generator(gs, 99).parameter_count() == expected_generator_params(gs));
    CHECK(Discriminator(ds, 0).parameter_count() == expected_discriminator_params(ds));
  }
  // Golden values for the study configuration.
  CHECK(Generator(GeneratorSpec::standard(5), 0).parameter_count() == 22490383);
  CHECK(Discriminator(DiscriminatorSpec::standard(5), 0).parameter_count() == 22561281);
}

TEST_CASE("discriminator scores one value per sample and is batch-permutation equivariant") {
  DiscriminatorSpec ds = DiscriminatorSpec::matching(narrow(3));
  const Discriminator d(ds, 5);
  const ImagePyramid p = random_pyramid(3, 4, 20, DType::F64);
  const Tensor s = d.forward(p);
  CHECK(s.shape() == Shape{4, 1});

  // Reverse the batch at every scale.
  ImagePyramid rev;
  for (const auto& t : p) {
    const auto per = t.numel() / 4;
    const auto v = t.to_vector();
    std::vector<double> r;
    for (int i = 3; i >= 0; --i) r.insert(r.end(), v.begin() + i * per, v.begin() + (i + 1) * per);
    rev.push_back(Tensor::from_vector(t.shape(), r, DType::F64));
  }
  const Tensor sr = d.forward(rev);
  for (int i = 0; i < 4; ++i) CHECK(sr.at(3 - i) == doctest::Approx(s.at(i)).epsilon(1e-12));

  CHECK_THROWS_AS(d.forward(random_pyramid(2, 4, 1, DType::F64)), std::invalid_argument);
  ImagePyramid bad = p;
  bad[1] = randn({4, 3, 4, 4}, 9, DType::F64);
  CHECK_THROWS_AS(d.forward(bad), std::invalid_argument);
}

TEST_CASE("zeroing the coarse-scale concat weights leaves only the finest scale in play") {
  Discriminator d(DiscriminatorSpec::matching(narrow(3)), 6);
  for (auto& b : d.blocks()) {
    if (b.entry) continue;
    // Input channels are features, 3 rgb, then the stddev channel; the latter
    // also pools over the coarse rgb, so it is zeroed along with them.
    const auto c = b.conv_a.weight.shape()[1] - 4;
    auto w = b.conv_a.weight.value.mutable_data<double>();
    const auto per_in = b.conv_a.weight.shape()[2] * b.conv_a.weight.shape()[3];
    const auto in_ch = b.conv_a.weight.shape()[1];
    for (std::int64_t o = 0; o < b.conv_a.weight.shape()[0]; ++o)
      for (std::int64_t i = c; i < c + 4; ++i)
        for (std::int64_t j = 0; j < per_in; ++j)
          w[static_cast<std::size_t>((o * in_ch + i) * per_in + j)] = 0.0;
  }
  ImagePyramid p = random_pyramid(3, 2, 30, DType::F64);
  const auto before = d.forward(p).to_vector();
  p[0] = randn(p[0].shape(), 77, DType::F64);
  p[1] = randn(p[1].shape(), 78, DType::F64);
  CHECK(d.forward(p).to_vector() == before);
  p[2] = randn(p[2].shape(), 79, DType::F64);
  CHECK(d.forward(p).to_vector() != before);
}

TEST_CASE("block-1 generator parameters receive gradient without the finest scale") {
  Generator g(narrow(3), 7);
  const Discriminator d(DiscriminatorSpec::matching(narrow(3)), 8);
  ImagePyramid fake = g.forward(randn({2, 8}, 9, DType::F64));
  fake.back() = Tensor::zeros(fake.back().shape(), DType::F64);
  const Tensor score = ad::sum(d.forward(fake));
  ParameterRefs block1;
  for (auto* p : g.parameters()) {
    if (p->name.rfind("block1/", 0) == 0) block1.push_back(p);
  }
  REQUIRE(!block1.empty());
  std::vector<Tensor> targets;
  for (auto* p : block1) targets.push_back(p->value);
  double norm = 0.0;
  for (const auto& gr : ad::grad(score, targets))
    for (double v : gr.to_vector()) norm += v * v;
  CHECK(norm > 0.0);
}

TEST_CASE("shape audit reproduces both published tables") {
  for (int depth : {5, 9}) {
    const AuditReport r = audit_shapes(depth);
    INFO("depth " << depth);
    CHECK(r.passed());
    CHECK(r.failures() == 0);
    CHECK(r.lines.size() > 20);
  }
  const auto g9 = reference_generator_table(9);
  CHECK(g9.back().shape == Shape{16, 1024, 1024});
  const auto d9 = reference_discriminator_table(9);
  bool saw17 = false, saw515 = false, saw259 = false;
  for (const auto& row : d9) {
    saw17 |= row.shape == Shape{17, 1024, 1024};
    saw515 |= row.shape == Shape{515, 8, 8};
    saw259 |= row.shape == Shape{259, 64, 64};
  }
  CHECK((saw17 && saw515 && saw259));
  CHECK(d9.back().shape == Shape{1, 1, 1});
  CHECK(d9[d9.size() - 2].shape == Shape{512, 1, 1});
}

TEST_CASE("symbolic shape trace equals the trace of a real forward pass") {
  const Generator g(GeneratorSpec::standard(5), 0);
  const Discriminator d(DiscriminatorSpec::standard(5), 0);
  ShapeTrace gt, dt;
  const auto pyramid = g.forward(randn({1, 512}, 1), &gt);
  d.forward(pyramid, &dt);
  auto same = [](const ShapeTrace& a, const ShapeTrace& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].op != b[i].op || a[i].shape != b[i].shape || a[i].block != b[i].block ||
          a[i].rgb_tap != b[i].rgb_tap) {
        return false;
      }
    }
    return true;
  };
  CHECK(same(gt, g.shape_trace()));
  CHECK(same(dt, d.shape_trace()));
  CHECK(audit_traces(5, gt, dt).passed());
}

TEST_CASE("audit printout ends in a verdict") {
  std::ostringstream os;
  print_audit(audit_shapes(5), os);
  CHECK(os.str().find("PASS") != std::string::npos);
}
