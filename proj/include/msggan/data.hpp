#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "msggan/msggan_net.hpp"

// Patch corpus ingestion, deterministic splits, resizing and batching.
namespace msggan::data {

namespace fs = std::filesystem;

struct PatchRecord {
  std::string path;  // relative to the dataset root, '/'-separated
  int label = 0;     // 0 = IDC-, 1 = IDC+
};

struct PatchDataset {
  fs::path root;
  std::vector<PatchRecord> records;  // sorted by relative path
  std::array<std::size_t, 2> counts{0, 0};
  std::vector<std::string> warnings;  // one entry per rejected file

  fs::path absolute(std::size_t i) const { return root / records.at(i).path; }
  std::size_t size() const { return records.size(); }
};

// Scans <root>/0 and <root>/1 recursively. Files that are not PNGs (by
// signature and header) are skipped with a warning. Throws when a class
// directory is missing or ends up empty.
PatchDataset ingest_directory(const fs::path& root);

using IndexList = std::vector<std::size_t>;

struct SplitPlan {
  std::uint64_t seed = 0;
  IndexList gan_pool;
  IndexList cls_pool;
  IndexList train;  // drawn from cls_pool
  IndexList test;

  std::map<std::string, const IndexList*> subsets() const;
};

struct SplitSizes {
  std::size_t gan_per_class = 40000;
  std::size_t cls_per_class = 38000;
};

// Per class: seeded shuffle of the canonical order, the first gan_per_class
// indices go to gan_pool and the next cls_per_class to cls_pool. With
// `proportional`, each class is divided in the ratio gan:cls instead, sizes
// floored and the remainder given to gan_pool.
SplitPlan make_split(const PatchDataset& ds, std::uint64_t seed, bool proportional = false,
                     SplitSizes sizes = {});

struct TrainTest {
  IndexList train;
  IndexList test;
};

// Stratified: |train| = floor(n·frac) overall, each class contributes
// floor(n_c·frac) and leftover train slots go to the classes with the largest
// fractional parts (lower label first on ties). Results are sorted.
TrainTest train_test_split(const IndexList& pool, const std::vector<int>& labels_of_pool,
                           double train_frac, std::uint64_t seed);
// Convenience overload reading labels from the dataset.
TrainTest train_test_split(const PatchDataset& ds, const IndexList& pool, double train_frac,
                           std::uint64_t seed);

std::vector<int> labels_of(const PatchDataset& ds, const IndexList& indices);

// Rows "path,label,subset", one per subset membership.
void write_split_manifest(const fs::path& file, const PatchDataset& ds, const SplitPlan& plan);
SplitPlan read_split_manifest(const fs::path& file, const PatchDataset& ds);

// Bilinear resize with half-pixel centres and edge clamping. Planar CHW
// float input and output.
std::vector<float> resize_bilinear(const std::vector<float>& chw, int channels, int height,
                                   int width, int out_h, int out_w);

// Decodes an 8-bit PNG, resizes to size×size, maps [0,255] to [-1,1].
// Rejects grayscale images.
Tensor load_and_normalize(const fs::path& path, int size, DType dt = DType::F32);

// Inverse map to 8-bit, rounding and clamping.
std::uint8_t denormalize(double value);
double normalize(std::uint8_t value);

// D tensors, coarsest first, each the 2×2 average pool of the next finer.
net::ImagePyramid build_pyramid(const Tensor& batch, int depth);

// Seeded per-epoch shuffle of a subset; the last partial batch is kept.
class BatchIterator {
 public:
  BatchIterator(IndexList subset, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);

  bool next(IndexList& out);
  std::size_t num_batches() const;
  const IndexList& order() const { return order_; }

 private:
  IndexList order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
};

// Decoded, resized images kept in memory after their first use.
class ImageCache {
 public:
  ImageCache(const PatchDataset& ds, int size);

  const std::vector<float>& image(std::size_t index);
  // N×3×size×size.
  Tensor batch(const IndexList& indices, DType dt = DType::F32);
  int size() const { return size_; }

 private:
  const PatchDataset* ds_;
  int size_;
  std::unordered_map<std::size_t, std::vector<float>> cache_;
};

}  // namespace msggan::data
