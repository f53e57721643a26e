#include "ctdg/kernels.hpp"

#include <algorithm>

namespace ctdg::kernels {
namespace {

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const T v = dot(a + i * k, b + j * k, k);
      c[i * n + j] = accumulate ? c[i * n + j] + v : v;
    }
  }
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* row = c + i * n;
    if (!accumulate) std::fill(row, row + n, T(0));
    for (std::size_t p = 0; p < k; ++p) axpy(a[i * k + p], b + p * n, row, n);
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) axpy(a[p * m + i], b + p * n, c + i * n, n);
  }
}

template <typename T>
const KernelTable<T> kTable{"scalar", &dot<T>, &axpy<T>, &gemm_nt<T>, &gemm_nn<T>, &gemm_tn<T>};

}  // namespace

template <>
const KernelTable<float>& scalar_table<float>() {
  return kTable<float>;
}
template <>
const KernelTable<double>& scalar_table<double>() {
  return kTable<double>;
}

}  // namespace ctdg::kernels
