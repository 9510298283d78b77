#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "doctest.h"
#include "msggan/data.hpp"
#include "msggan/png_io.hpp"

using namespace msggan;
using namespace msggan::data;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("msggan_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_solid(const fs::path& file, int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  fs::create_directories(file.parent_path());
  png::Image img{w, h, {}};
  for (int i = 0; i < w * h; ++i) img.rgb.insert(img.rgb.end(), {r, g, b});
  png::write(file, img);
}

// Dataset with the given class sizes and no backing files.
PatchDataset synthetic(std::size_t n0, std::size_t n1) {
  PatchDataset ds;
  ds.root = "/nonexistent";
  char buf[32];
  for (int label = 0; label <= 1; ++label) {
    for (std::size_t i = 0; i < (label ? n1 : n0); ++i) {
      std::snprintf(buf, sizeof buf, "%d/p%07zu.png", label, i);
      ds.records.push_back({buf, label});
    }
  }
  ds.counts = {n0, n1};
  return ds;
}

bool disjoint(IndexList a, IndexList b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  IndexList both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  return both.empty();
}

std::size_t count_label(const PatchDataset& ds, const IndexList& idx, int label) {
  return static_cast<std::size_t>(std::count_if(idx.begin(), idx.end(),
                                                [&](auto i) { return ds.records[i].label == label; }));
}

}  // namespace

TEST_CASE("ingest counts one file per class") {
  const auto root = scratch("one");
  write_solid(root / "0" / "a.png", 2, 2, 0, 0, 0);
  write_solid(root / "1" / "b.png", 2, 2, 9, 9, 9);
  const auto ds = ingest_directory(root);
  CHECK(ds.counts[0] == 1);
  CHECK(ds.counts[1] == 1);
  CHECK(ds.records[0].path == "0/a.png");
  CHECK(ds.records[1].label == 1);
  CHECK(ds.warnings.empty());
  fs::remove_all(root);
}

TEST_CASE("ingest skips corrupt files with warnings") {
  const auto root = scratch("corrupt");
  for (int i = 0; i < 7; ++i) write_solid(root / std::to_string(i % 2) / ("ok" + std::to_string(i) + ".png"), 3, 3, 1, 2, 3);
  for (int i = 0; i < 3; ++i) std::ofstream(root / "1" / ("bad" + std::to_string(i) + ".png")) << "not a png";
  const auto ds = ingest_directory(root);
  CHECK(ds.records.size() == 7);
  CHECK(ds.warnings.size() == 3);
  CHECK(std::is_sorted(ds.records.begin(), ds.records.end(),
                       [](const auto& a, const auto& b) { return a.path < b.path; }));
  fs::remove_all(root);
}

TEST_CASE("ingest rejects an empty or missing class") {
  const auto root = scratch("empty");
  write_solid(root / "0" / "a.png", 2, 2, 0, 0, 0);
  CHECK_THROWS_AS(ingest_directory(root), std::invalid_argument);
  fs::create_directories(root / "1");
  CHECK_THROWS_AS(ingest_directory(root), std::invalid_argument);
  CHECK_THROWS_AS(ingest_directory(root / "nope"), std::invalid_argument);
  fs::remove_all(root);
}

TEST_CASE("paper-size split reproduces the published pool sizes") {
  const auto ds = synthetic(78000, 78000);
  const auto plan = make_split(ds, 17);
  CHECK(plan.gan_pool.size() == 80000);
  CHECK(plan.cls_pool.size() == 76000);
  CHECK(count_label(ds, plan.gan_pool, 1) == 40000);
  CHECK(count_label(ds, plan.cls_pool, 0) == 38000);
  CHECK(disjoint(plan.gan_pool, plan.cls_pool));
  const auto tt = train_test_split(ds, plan.cls_pool, 0.7, 17);
  CHECK(tt.train.size() == 53200);
  CHECK(tt.test.size() == 22800);
  CHECK(count_label(ds, tt.train, 0) == 26600);
  CHECK(disjoint(tt.train, tt.test));

  const auto again = make_split(ds, 17);
  CHECK(again.gan_pool == plan.gan_pool);
  CHECK(make_split(ds, 18).gan_pool != plan.gan_pool);
  CHECK_THROWS_AS(make_split(synthetic(100, 100), 1), std::invalid_argument);
}

TEST_CASE("proportional split follows the floor and remainder rule") {
  // Brute force: the only (gan, cls) with gan + cls = n, cls = floor(n·38/78).
  for (std::size_t n : {1u, 2u, 10u, 77u, 78u, 79u, 100u, 157u}) {
    std::size_t want_cls = 0;
    while ((want_cls + 1) * 78 <= n * 38) ++want_cls;
    const auto ds = synthetic(n, n + 1);
    const auto plan = make_split(ds, 3, true);
    INFO("n = " << n);
    CHECK(count_label(ds, plan.cls_pool, 0) == want_cls);
    CHECK(count_label(ds, plan.gan_pool, 0) == n - want_cls);
    CHECK(plan.gan_pool.size() + plan.cls_pool.size() == 2 * n + 1);
    CHECK(disjoint(plan.gan_pool, plan.cls_pool));
  }
  const auto plan = make_split(synthetic(100, 100), 5, true);
  CHECK(plan.gan_pool.size() == 104);
  CHECK(plan.cls_pool.size() == 96);
}

TEST_CASE("train/test split of ten items") {
  const auto ds = synthetic(5, 5);
  IndexList pool(10);
  std::iota(pool.begin(), pool.end(), 0);
  const auto tt = train_test_split(ds, pool, 0.7, 1);
  CHECK(tt.train.size() == 7);
  CHECK(tt.test.size() == 3);
  // Per class 3.5 → 3 each, one leftover slot to class 0 on the tie.
  CHECK(count_label(ds, tt.train, 0) == 4);
  CHECK(count_label(ds, tt.train, 1) == 3);
  IndexList all = tt.train;
  all.insert(all.end(), tt.test.begin(), tt.test.end());
  std::sort(all.begin(), all.end());
  CHECK(all == pool);
  CHECK_THROWS_AS(train_test_split(ds, IndexList{}, 0.7, 1), std::invalid_argument);
  CHECK_THROWS_AS(train_test_split(ds, pool, 1.0, 1), std::invalid_argument);
}

TEST_CASE("even pools keep exact label balance") {
  const auto ds = synthetic(500, 500);
  IndexList pool(1000);
  std::iota(pool.begin(), pool.end(), 0);
  const auto tt = train_test_split(ds, pool, 0.7, 4);
  CHECK(count_label(ds, tt.train, 0) == 350);
  CHECK(count_label(ds, tt.train, 1) == 350);
}

TEST_CASE("split manifest round trip") {
  const auto root = scratch("manifest");
  for (int i = 0; i < 6; ++i) write_solid(root / std::to_string(i % 2) / ("p" + std::to_string(i) + ".png"), 2, 2, 5, 5, 5);
  const auto ds = ingest_directory(root);
  auto plan = make_split(ds, 9, true);
  const auto tt = train_test_split(ds, plan.cls_pool, 0.5, 9);
  plan.train = tt.train;
  plan.test = tt.test;
  write_split_manifest(root / "split.csv", ds, plan);
  const auto back = read_split_manifest(root / "split.csv", ds);
  CHECK(back.gan_pool == plan.gan_pool);
  CHECK(back.cls_pool == plan.cls_pool);
  CHECK(back.train == plan.train);
  CHECK(back.test == plan.test);
  fs::remove_all(root);
}

TEST_CASE("load and normalize") {
  const auto root = scratch("load");
  write_solid(root / "p.png", 50, 50, 255, 0, 51);
  const Tensor t = load_and_normalize(root / "p.png", 64);
  CHECK(t.shape() == Shape{3, 64, 64});
  const auto v = t.to_vector();
  CHECK(std::all_of(v.begin(), v.begin() + 4096, [](double x) { return x == 1.0; }));
  CHECK(std::all_of(v.begin() + 4096, v.begin() + 8192, [](double x) { return x == -1.0; }));
  CHECK(v[9000] == doctest::Approx(51 / 127.5 - 1.0).epsilon(1e-6));

  std::ofstream(root / "junk.png") << "junk";
  CHECK_THROWS(load_and_normalize(root / "junk.png", 8));
  CHECK_THROWS(load_and_normalize(root / "missing.png", 8));
  fs::remove_all(root);
}

TEST_CASE("bilinear resize of a checkerboard matches hand-computed weights") {
  // 2×2 [[a,b],[b,a]] → 4×4. Half-pixel centres put output samples at
  // source coordinates -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped to 1).
  const float a = 1.0f, b = -1.0f;
  const auto out = resize_bilinear({a, b, b, a}, 1, 2, 2, 4, 4);
  const double w[4] = {0.0, 0.25, 0.75, 1.0};
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const double top = a * (1 - w[x]) + b * w[x];
      const double bot = b * (1 - w[x]) + a * w[x];
      CHECK(out[static_cast<std::size_t>(y * 4 + x)] ==
            doctest::Approx(top * (1 - w[y]) + bot * w[y]).epsilon(1e-7));
    }
  const auto flat = resize_bilinear(std::vector<float>(25, 0.3f), 1, 5, 5, 13, 7);
  CHECK(std::all_of(flat.begin(), flat.end(), [](float x) { return x == doctest::Approx(0.3f); }));
}

TEST_CASE("normalization round trip is lossless on 8-bit values") {
  for (int v = 0; v < 256; ++v) {
    const auto u = static_cast<std::uint8_t>(v);
    CHECK(std::abs(int{denormalize(normalize(u))} - v) <= 1);
    CHECK(static_cast<float>(normalize(u)) >= -1.0f);
  }
  CHECK(denormalize(-7.0) == 0);
  CHECK(denormalize(3.0) == 255);
}

TEST_CASE("pyramid levels are box-filter downsamples of the finest image") {
  Rng rng(3);
  std::vector<double> v(2 * 3 * 64 * 64);
  for (auto& x : v) x = rng.uniform() * 2 - 1;
  const Tensor batch = Tensor::from_vector({2, 3, 64, 64}, v, DType::F64);
  const auto p = build_pyramid(batch, 5);
  REQUIRE(p.size() == 5);
  for (int k = 1; k <= 5; ++k) {
    const std::int64_t r = 4 << (k - 1);
    REQUIRE(p[static_cast<std::size_t>(k - 1)].shape() == Shape{2, 3, r, r});
    const std::int64_t f = 64 / r;
    const auto lv = p[static_cast<std::size_t>(k - 1)].to_vector();
    double worst = 0.0;
    for (std::int64_t nc = 0; nc < 6; ++nc)
      for (std::int64_t y = 0; y < r; ++y)
        for (std::int64_t x = 0; x < r; ++x) {
          double s = 0.0;
          for (std::int64_t dy = 0; dy < f; ++dy)
            for (std::int64_t dx = 0; dx < f; ++dx) s += v[static_cast<std::size_t>((nc * 64 + y * f + dy) * 64 + x * f + dx)];
          worst = std::max(worst, std::abs(s / double(f * f) - lv[static_cast<std::size_t>((nc * r + y) * r + x)]));
        }
    CHECK(worst <= 1e-12);
  }
  const auto flat = build_pyramid(Tensor::full({1, 3, 16, 16}, 0.25, DType::F64), 3);
  for (const auto& lvl : flat) {
    const auto lv = lvl.to_vector();
    CHECK(std::all_of(lv.begin(), lv.end(), [](double x) { return x == 0.25; }));
  }
  CHECK_THROWS_AS(build_pyramid(batch, 4), std::invalid_argument);
}

TEST_CASE("batch iterator") {
  IndexList subset(10);
  std::iota(subset.begin(), subset.end(), 100);
  BatchIterator it(subset, 4, 7, 0);
  CHECK(it.num_batches() == 3);
  std::vector<std::size_t> sizes;
  IndexList b, seen;
  while (it.next(b)) {
    sizes.push_back(b.size());
    seen.insert(seen.end(), b.begin(), b.end());
  }
  CHECK(sizes == std::vector<std::size_t>{4, 4, 2});
  std::sort(seen.begin(), seen.end());
  CHECK(seen == subset);
  CHECK(BatchIterator(subset, 4, 7, 0).order() == BatchIterator(subset, 4, 7, 0).order());
  CHECK(BatchIterator(subset, 4, 7, 1).order() != BatchIterator(subset, 4, 7, 0).order());
  CHECK_THROWS(BatchIterator(subset, 0, 1, 0));
}

TEST_CASE("image cache batches decoded images") {
  const auto root = scratch("cache");
  write_solid(root / "0" / "a.png", 10, 10, 0, 0, 0);
  write_solid(root / "1" / "b.png", 10, 10, 255, 255, 255);
  const auto ds = ingest_directory(root);
  ImageCache cache(ds, 8);
  const Tensor t = cache.batch({1, 0, 1});
  CHECK(t.shape() == Shape{3, 3, 8, 8});
  CHECK(t.at(0) == 1.0);
  CHECK(t.at(3 * 64) == -1.0);
  fs::remove_all(root);
}
