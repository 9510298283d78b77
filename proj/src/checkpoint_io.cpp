#include "msggan/checkpoint_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace msggan::ckpt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint arrays are written in native order");

Manifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("checkpoint: missing manifest " + file.string());
  Manifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("checkpoint: malformed manifest line '" + line + "'");
    }
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

void write_manifest(const std::filesystem::path& file, const Manifest& m) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  for (const auto& [k, v] : m) out << k << '=' << v << '\n';
  if (!out) throw std::runtime_error("checkpoint: cannot write manifest " + file.string());
}

const std::string& field(const Manifest& m, const std::string& key) {
  const auto it = m.find(key);
  if (it == m.end()) throw std::runtime_error("checkpoint: manifest lacks " + key);
  return it->second;
}

void write_array(const std::filesystem::path& file, const Tensor& t) {
  std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + file.string());
  dispatch(t.dtype(), [&]<class T>() {
    const auto d = t.data<T>();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(T)));
  });
  if (!out) throw std::runtime_error("checkpoint: short write to " + file.string());
}

Tensor read_array(const std::filesystem::path& file, const Shape& shape, DType dt) {
  std::ifstream in(file, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("checkpoint: missing array " + file.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  return dispatch(dt, [&]<class T>() {
    std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
    if (bytes != v.size() * sizeof(T)) {
      throw std::runtime_error("checkpoint: corrupted array length in " + file.string() +
                               " (expected " + std::to_string(v.size() * sizeof(T)) +
                               " bytes, found " + std::to_string(bytes) + ")");
    }
    in.seekg(0);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
    return Tensor::from_storage<T>(shape, std::move(v));
  });
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace msggan::ckpt
