#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace msggan::png {

// 8-bit RGB, row-major, interleaved.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
  bool source_is_gray = false;  // decoded from a grayscale PNG
};

class PngError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Decodes any PNG colour type into 8-bit RGB (alpha dropped, gray expanded).
Image read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const Image& image);

// Cheap header validation: signature plus a well-formed IHDR chunk.
bool looks_like_png(const std::filesystem::path& path);

}  // namespace msggan::png
