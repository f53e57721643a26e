#pragma once

// Binary dense-matrix files:
//   bytes 0..7   magic "CTDGFEAT"
//   u64 rows, u64 cols, u32 element type (1 = f32, 2 = f64), u32 reserved
//   row-major payload, little-endian.
// Feature stores are always f32; parameter checkpoints use the store's
// precision.

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ctdg {

struct MatrixFile {
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  std::uint32_t type = 1;
  std::vector<float> f32;
  std::vector<double> f64;
};

void write_matrix(const std::filesystem::path& path, std::uint64_t rows, std::uint64_t cols,
                  const float* data);
void write_matrix(const std::filesystem::path& path, std::uint64_t rows, std::uint64_t cols,
                  const double* data);
MatrixFile read_matrix(const std::filesystem::path& path);

}  // namespace ctdg
