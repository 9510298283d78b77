#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "msggan/tensor.hpp"

// Building blocks of the on-disk checkpoint layout: a key=value manifest and
// one raw little-endian array file per tensor.
namespace msggan::ckpt {

using Manifest = std::map<std::string, std::string>;

Manifest read_manifest(const std::filesystem::path& file);
void write_manifest(const std::filesystem::path& file, const Manifest& m);
// Throws when the key is absent.
const std::string& field(const Manifest& m, const std::string& key);

void write_array(const std::filesystem::path& file, const Tensor& t);
// Fails on a missing file or a byte length that disagrees with shape and dtype.
Tensor read_array(const std::filesystem::path& file, const Shape& shape, DType dt);

// Round-trip-exact decimal text for a double.
std::string exact(double v);

}  // namespace msggan::ckpt
