#include "msggan/png_io.hpp"

#include <png.h>

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <csetjmp>

namespace msggan::png {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw PngError("cannot open " + path.string());
  return f;
}

thread_local std::string last_error;

[[noreturn]] void on_error(png_structp png, png_const_charp message) {
  last_error = message;
  png_longjmp(png, 1);
}
void on_warning(png_structp, png_const_charp) {}

// Everything libpng touches lives in plain buffers prepared by the caller, so
// the longjmp back into these functions skips no destructors.
bool decode(png_structp png, png_infop info, std::FILE* file, Image& image,
            std::vector<png_bytep>& rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, file);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  image.source_is_gray = (color & PNG_COLOR_MASK_COLOR) == 0;
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  image.width = static_cast<int>(png_get_image_width(png, info));
  image.height = static_cast<int>(png_get_image_height(png, info));
  if (png_get_rowbytes(png, info) != static_cast<std::size_t>(image.width) * 3) {
    last_error = "unexpected row layout";
    return false;
  }
  image.rgb.resize(static_cast<std::size_t>(image.width) * image.height * 3);
  rows.resize(static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) {
    rows[static_cast<std::size_t>(y)] =
        image.rgb.data() + static_cast<std::size_t>(y) * image.width * 3;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return true;
}

bool encode(png_structp png, png_infop info, std::FILE* file, const Image& image) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, file);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, image.rgb.data() + static_cast<std::size_t>(y) * image.width * 3);
  }
  png_write_end(png, nullptr);
  return true;
}

}  // namespace

Image read(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  std::array<unsigned char, 8> sig{};
  if (std::fread(sig.data(), 1, sig.size(), file.get()) != sig.size() ||
      png_sig_cmp(sig.data(), 0, sig.size()) != 0) {
    throw PngError("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw PngError("libpng initialisation failed");
  }
  Image image;
  std::vector<png_bytep> rows;
  const bool ok = decode(png, info, file.get(), image, rows);
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw PngError(path.string() + ": " + last_error);
  return image;
}

void write(const std::filesystem::path& path, const Image& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw PngError("write: image buffer does not match its dimensions");
  }
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw PngError("libpng initialisation failed");
  }
  const bool ok = encode(png, info, file.get(), image);
  png_destroy_write_struct(&png, &info);
  if (!ok) throw PngError(path.string() + ": " + last_error);
}

bool looks_like_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::array<unsigned char, 33> head{};
  if (!in.read(reinterpret_cast<char*>(head.data()), head.size())) return false;
  if (png_sig_cmp(head.data(), 0, 8) != 0) return false;
  // First chunk: length 13, type IHDR, nonzero dimensions.
  const auto be32 = [&](int off) {
    return (std::uint32_t{head[off]} << 24) | (std::uint32_t{head[off + 1]} << 16) |
           (std::uint32_t{head[off + 2]} << 8) | std::uint32_t{head[off + 3]};
  };
  if (be32(8) != 13 || std::memcmp(head.data() + 12, "IHDR", 4) != 0) return false;
  return be32(16) > 0 && be32(20) > 0;
}

}  // namespace msggan::png
