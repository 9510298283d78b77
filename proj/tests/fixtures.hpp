#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "msggan/png_io.hpp"
#include "msggan/rng.hpp"

// On-disk patch corpora for tests: <root>/<label>/img_NNNN.png.
namespace fixtures {

namespace fs = std::filesystem;

inline fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("msggan_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Label-1 images are bright and label-0 images dark, with per-pixel noise.
// `offset` shifts the brightness of both classes.
inline void write_corpus(const fs::path& root, int per_class, int size, std::uint64_t seed,
                         double offset = 0.0) {
  for (int label = 0; label < 2; ++label) {
    fs::create_directories(root / std::to_string(label));
    for (int i = 0; i < per_class; ++i) {
      msggan::Rng rng(msggan::mix_seed(seed, static_cast<std::uint64_t>(label * 100000 + i)));
      msggan::png::Image img;
      img.width = img.height = size;
      const double base = (label ? 170.0 : 80.0) + offset;
      for (int p = 0; p < size * size * 3; ++p) {
        const double v = base + 25.0 * rng.normal();
        img.rgb.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)));
      }
      char name[32];
      std::snprintf(name, sizeof name, "img_%04d.png", i);
      msggan::png::write(root / std::to_string(label) / name, img);
    }
  }
}

// One fixed image per class, copied `copies` times.
inline void write_duplicated_corpus(const fs::path& root, int copies, int size) {
  for (int label = 0; label < 2; ++label) {
    fs::create_directories(root / std::to_string(label));
    msggan::png::Image img;
    img.width = img.height = size;
    img.rgb.assign(static_cast<std::size_t>(size * size * 3), label ? 220 : 30);
    for (int i = 0; i < copies; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "dup_%04d.png", i);
      msggan::png::write(root / std::to_string(label) / name, img);
    }
  }
}

}  // namespace fixtures
