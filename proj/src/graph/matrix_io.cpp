#include "ctdg/matrix_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "ctdg/error.hpp"

namespace ctdg {

static_assert(std::endian::native == std::endian::little, "matrix files assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'T', 'D', 'G', 'F', 'E', 'A', 'T'};
constexpr std::size_t kHeader = 8 + 8 + 8 + 4 + 4;

template <typename T>
void write_impl(const std::filesystem::path& path, std::uint64_t rows, std::uint64_t cols,
                const T* data, std::uint32_t type) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  const std::uint32_t reserved = 0;
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&rows), 8);
  out.write(reinterpret_cast<const char*>(&cols), 8);
  out.write(reinterpret_cast<const char*>(&type), 4);
  out.write(reinterpret_cast<const char*>(&reserved), 4);
  if (rows * cols > 0) out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(rows * cols * sizeof(T)));
  if (!out) throw ConfigError("write failed: " + path.string());
}

}  // namespace

void write_matrix(const std::filesystem::path& path, std::uint64_t rows, std::uint64_t cols,
                  const float* data) {
  write_impl(path, rows, cols, data, 1);
}

void write_matrix(const std::filesystem::path& path, std::uint64_t rows, std::uint64_t cols,
                  const double* data) {
  write_impl(path, rows, cols, data, 2);
}

MatrixFile read_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  if (size < kHeader) throw FormatError(path.string() + ": truncated header");
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw FormatError(path.string() + ": bad magic");
  MatrixFile m;
  std::uint32_t reserved = 0;
  in.read(reinterpret_cast<char*>(&m.rows), 8);
  in.read(reinterpret_cast<char*>(&m.cols), 8);
  in.read(reinterpret_cast<char*>(&m.type), 4);
  in.read(reinterpret_cast<char*>(&reserved), 4);
  if (m.type != 1 && m.type != 2) throw FormatError(path.string() + ": unknown element type " + std::to_string(m.type));
  const std::uint64_t elem = m.type == 1 ? 4 : 8;
  if (m.cols != 0 && m.rows > (size - kHeader) / m.cols / elem + 1) {
    throw FormatError(path.string() + ": header declares more data than the file holds");
  }
  const std::uint64_t count = m.rows * m.cols;
  if (size - kHeader != count * elem) {
    throw FormatError(path.string() + ": payload is " + std::to_string(size - kHeader) + " bytes, header declares " +
                      std::to_string(count * elem));
  }
  if (m.type == 1) {
    m.f32.resize(count);
    in.read(reinterpret_cast<char*>(m.f32.data()), static_cast<std::streamsize>(count * 4));
  } else {
    m.f64.resize(count);
    in.read(reinterpret_cast<char*>(m.f64.data()), static_cast<std::streamsize>(count * 8));
  }
  if (!in) throw FormatError(path.string() + ": short read");
  return m;
}

}  // namespace ctdg
