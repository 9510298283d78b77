#include "msggan/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "msggan/ops.hpp"
#include "msggan/png_io.hpp"
#include "msggan/rng.hpp"

namespace msggan::data {

namespace {

// floor(x) that treats values within relative 1e-9 of an integer as that
// integer, so 76000·0.7 counts as 53200.
std::size_t stable_floor(double x) {
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x))) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::floor(x));
}

void require_label(int label) {
  if (label != 0 && label != 1) throw std::invalid_argument("labels must be 0 or 1");
}

}  // namespace

PatchDataset ingest_directory(const fs::path& root) {
  if (!fs::is_directory(root)) {
    throw std::invalid_argument("dataset root is not a directory: " + root.string());
  }
  PatchDataset ds;
  ds.root = root;
  for (int label = 0; label <= 1; ++label) {
    const fs::path dir = root / std::to_string(label);
    if (!fs::is_directory(dir)) {
      throw std::invalid_argument("missing class directory " + dir.string());
    }
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      const std::string rel = fs::relative(entry.path(), root).generic_string();
      if (!png::looks_like_png(entry.path())) {
        ds.warnings.push_back("skipped non-PNG file " + rel);
        continue;
      }
      ds.records.push_back({rel, label});
      ++ds.counts[static_cast<std::size_t>(label)];
    }
  }
  for (int label = 0; label <= 1; ++label) {
    if (ds.counts[static_cast<std::size_t>(label)] == 0) {
      throw std::invalid_argument("class " + std::to_string(label) + " has no PNG patches under " +
                                  root.string());
    }
  }
  std::sort(ds.records.begin(), ds.records.end(),
            [](const PatchRecord& a, const PatchRecord& b) { return a.path < b.path; });
  std::sort(ds.warnings.begin(), ds.warnings.end());
  return ds;
}

std::map<std::string, const IndexList*> SplitPlan::subsets() const {
  return {{"gan_pool", &gan_pool}, {"cls_pool", &cls_pool}, {"train", &train}, {"test", &test}};
}

SplitPlan make_split(const PatchDataset& ds, std::uint64_t seed, bool proportional,
                     SplitSizes sizes) {
  if (sizes.gan_per_class + sizes.cls_per_class == 0) {
    throw std::invalid_argument("make_split: requested pool sizes are both zero");
  }
  SplitPlan plan;
  plan.seed = seed;
  for (int label = 0; label <= 1; ++label) {
    IndexList idx;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      if (ds.records[i].label == label) idx.push_back(i);
    }
    const std::size_t n = idx.size();
    std::size_t n_gan = sizes.gan_per_class;
    std::size_t n_cls = sizes.cls_per_class;
    if (proportional) {
      const double total = static_cast<double>(sizes.gan_per_class + sizes.cls_per_class);
      n_cls = stable_floor(static_cast<double>(n) * static_cast<double>(sizes.cls_per_class) / total);
      n_gan = n - n_cls;
    } else if (n < n_gan + n_cls) {
      throw std::invalid_argument("make_split: class " + std::to_string(label) + " has " +
                                  std::to_string(n) + " patches, needs " +
                                  std::to_string(n_gan + n_cls) +
                                  " (use proportional scaling for smaller corpora)");
    }
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(label) + 1));
    rng.shuffle(idx.begin(), idx.end());
    plan.gan_pool.insert(plan.gan_pool.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_gan));
    plan.cls_pool.insert(plan.cls_pool.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_gan),
                         idx.begin() + static_cast<std::ptrdiff_t>(n_gan + n_cls));
  }
  std::sort(plan.gan_pool.begin(), plan.gan_pool.end());
  std::sort(plan.cls_pool.begin(), plan.cls_pool.end());
  return plan;
}

TrainTest train_test_split(const IndexList& pool, const std::vector<int>& labels,
                           double train_frac, std::uint64_t seed) {
  if (pool.empty()) throw std::invalid_argument("train_test_split: empty pool");
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw std::invalid_argument("train_test_split: train fraction must lie in (0,1)");
  }
  if (labels.size() != pool.size()) {
    throw std::invalid_argument("train_test_split: label count differs from pool size");
  }
  std::array<IndexList, 2> by_class;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    require_label(labels[i]);
    by_class[static_cast<std::size_t>(labels[i])].push_back(pool[i]);
  }
  const std::size_t total_train = stable_floor(static_cast<double>(pool.size()) * train_frac);
  std::array<std::size_t, 2> take{};
  std::array<double, 2> frac{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < 2; ++c) {
    const double exact = static_cast<double>(by_class[c].size()) * train_frac;
    take[c] = stable_floor(exact);
    frac[c] = exact - static_cast<double>(take[c]);
    assigned += take[c];
  }
  while (assigned < total_train) {
    const std::size_t c = frac[1] > frac[0] ? 1 : 0;
    ++take[c];
    frac[c] = -1.0;
    ++assigned;
  }
  TrainTest out;
  for (std::size_t c = 0; c < 2; ++c) {
    auto& idx = by_class[c];
    std::sort(idx.begin(), idx.end());
    Rng rng(mix_seed(seed, 100 + c));
    rng.shuffle(idx.begin(), idx.end());
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take[c]));
    out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(take[c]), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

TrainTest train_test_split(const PatchDataset& ds, const IndexList& pool, double train_frac,
                           std::uint64_t seed) {
  return train_test_split(pool, labels_of(ds, pool), train_frac, seed);
}

std::vector<int> labels_of(const PatchDataset& ds, const IndexList& indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(ds.records.at(i).label);
  return out;
}

void write_split_manifest(const fs::path& file, const PatchDataset& ds, const SplitPlan& plan) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write split manifest " + file.string());
  out << "path,label,subset\n";
  for (const char* name : {"gan_pool", "cls_pool", "train", "test"}) {
    for (auto i : *plan.subsets().at(name)) {
      const auto& r = ds.records.at(i);
      if (r.path.find_first_of(",\n\"") != std::string::npos) {
        throw std::runtime_error("path cannot be written to CSV: " + r.path);
      }
      out << r.path << ',' << r.label << ',' << name << '\n';
    }
  }
}

SplitPlan read_split_manifest(const fs::path& file, const PatchDataset& ds) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read split manifest " + file.string());
  std::unordered_map<std::string, std::size_t> where;
  for (std::size_t i = 0; i < ds.records.size(); ++i) where.emplace(ds.records[i].path, i);
  SplitPlan plan;
  std::map<std::string, IndexList*> target{{"gan_pool", &plan.gan_pool},
                                           {"cls_pool", &plan.cls_pool},
                                           {"train", &plan.train},
                                           {"test", &plan.test}};
  std::string line;
  std::getline(in, line);
  if (line != "path,label,subset") throw std::runtime_error("split manifest: bad header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos) {
      throw std::runtime_error("split manifest: malformed row '" + line + "'");
    }
    const std::string path = line.substr(0, a);
    const int label = std::stoi(line.substr(a + 1, b - a - 1));
    const std::string subset = line.substr(b + 1);
    const auto it = where.find(path);
    if (it == where.end()) throw std::runtime_error("split manifest: unknown path " + path);
    if (ds.records[it->second].label != label) {
      throw std::runtime_error("split manifest: label mismatch for " + path);
    }
    const auto t = target.find(subset);
    if (t == target.end()) throw std::runtime_error("split manifest: unknown subset " + subset);
    t->second->push_back(it->second);
  }
  return plan;
}

std::vector<float> resize_bilinear(const std::vector<float>& chw, int channels, int height,
                                   int width, int out_h, int out_w) {
  if (chw.size() != static_cast<std::size_t>(channels) * height * width || out_h < 1 || out_w < 1) {
    throw std::invalid_argument("resize_bilinear: bad dimensions");
  }
  struct Tap {
    int i0, i1;
    double w1;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      const double src = std::clamp((o + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
      const int i0 = static_cast<int>(std::floor(src));
      const int i1 = std::min(i0 + 1, in - 1);
      t[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
    }
    return t;
  };
  const auto ty = taps(height, out_h);
  const auto tx = taps(width, out_w);
  std::vector<float> out(static_cast<std::size_t>(channels) * out_h * out_w);
  for (int c = 0; c < channels; ++c) {
    const float* src = chw.data() + static_cast<std::size_t>(c) * height * width;
    float* dst = out.data() + static_cast<std::size_t>(c) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const auto& a = ty[static_cast<std::size_t>(y)];
      for (int x = 0; x < out_w; ++x) {
        const auto& b = tx[static_cast<std::size_t>(x)];
        const double top = src[a.i0 * width + b.i0] * (1 - b.w1) + src[a.i0 * width + b.i1] * b.w1;
        const double bot = src[a.i1 * width + b.i0] * (1 - b.w1) + src[a.i1 * width + b.i1] * b.w1;
        dst[y * out_w + x] = static_cast<float>(top * (1 - a.w1) + bot * a.w1);
      }
    }
  }
  return out;
}

double normalize(std::uint8_t value) { return value / 127.5 - 1.0; }

std::uint8_t denormalize(double value) {
  return static_cast<std::uint8_t>(std::lround(std::clamp((value + 1.0) * 127.5, 0.0, 255.0)));
}

namespace {

std::vector<float> decode_resized(const fs::path& path, int size) {
  const png::Image img = png::read(path);
  if (img.source_is_gray) {
    throw std::invalid_argument("expected an RGB image, got grayscale: " + path.string());
  }
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  std::vector<float> chw(plane * 3);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      chw[c * plane + p] = static_cast<float>(normalize(img.rgb[p * 3 + c]));
    }
  }
  if (img.width == size && img.height == size) return chw;
  return resize_bilinear(chw, 3, img.height, img.width, size, size);
}

}  // namespace

Tensor load_and_normalize(const fs::path& path, int size, DType dt) {
  if (size < 1) throw std::invalid_argument("load_and_normalize: size must be positive");
  auto v = decode_resized(path, size);
  std::vector<double> d(v.begin(), v.end());
  return Tensor::from_vector({3, size, size}, d, dt);
}

net::ImagePyramid build_pyramid(const Tensor& batch, int depth) {
  if (depth < 1 || batch.rank() != 4 || batch.dim(2) != batch.dim(3) ||
      batch.dim(2) != net::block_resolution(depth)) {
    throw std::invalid_argument("build_pyramid: batch of shape " + shape_str(batch.shape()) +
                                " cannot form a depth-" + std::to_string(depth) + " pyramid");
  }
  NoGradGuard no_grad;
  net::ImagePyramid p(static_cast<std::size_t>(depth));
  p.back() = batch.detach();
  for (int k = depth - 1; k >= 1; --k) {
    p[static_cast<std::size_t>(k - 1)] = ad::avg_pool_2x2(p[static_cast<std::size_t>(k)]);
  }
  return p;
}

BatchIterator::BatchIterator(IndexList subset, std::size_t batch_size, std::uint64_t seed,
                             std::uint64_t epoch)
    : order_(std::move(subset)), batch_size_(batch_size) {
  if (batch_size_ < 1) throw std::invalid_argument("BatchIterator: batch_size must be >= 1");
  Rng rng(mix_seed(seed, epoch));
  rng.shuffle(order_.begin(), order_.end());
}

bool BatchIterator::next(IndexList& out) {
  out.clear();
  if (cursor_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  out.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
             order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return true;
}

std::size_t BatchIterator::num_batches() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

ImageCache::ImageCache(const PatchDataset& ds, int size) : ds_(&ds), size_(size) {
  if (size < 1) throw std::invalid_argument("ImageCache: size must be positive");
}

const std::vector<float>& ImageCache::image(std::size_t index) {
  auto it = cache_.find(index);
  if (it == cache_.end()) it = cache_.emplace(index, decode_resized(ds_->absolute(index), size_)).first;
  return it->second;
}

Tensor ImageCache::batch(const IndexList& indices, DType dt) {
  const std::size_t per = static_cast<std::size_t>(3) * size_ * size_;
  return dispatch(dt, [&]<class T>() {
    std::vector<T> v(indices.size() * per);
    for (std::size_t n = 0; n < indices.size(); ++n) {
      const auto& img = image(indices[n]);
      std::copy(img.begin(), img.end(), v.begin() + static_cast<std::ptrdiff_t>(n * per));
    }
    return Tensor::from_storage<T>({static_cast<std::int64_t>(indices.size()), 3, size_, size_},
                                   std::move(v));
  });
}

}  // namespace msggan::data
