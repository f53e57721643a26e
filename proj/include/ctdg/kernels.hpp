#pragma once

// Dense inner-loop kernels. Each routine has a portable scalar reference
// and, on x86-64, an AVX2+FMA variant compiled in its own translation unit.
// The variant is picked once per process from CPUID; setting the
// environment variable CTDG_KERNELS=scalar forces the reference path.
//
// Layout conventions are row-major throughout:
//   gemm_nt: C[m,n] (+)= A[m,k] * B[n,k]^T
//   gemm_nn: C[m,n] (+)= A[m,k] * B[k,n]
//   gemm_tn: C[m,n] (+)= A[k,m]^T * B[k,n]

#include <cstddef>
#include <string_view>

namespace ctdg::kernels {

template <typename T>
struct KernelTable {
  std::string_view name;
  T (*dot)(const T* a, const T* b, std::size_t n);
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                  bool accumulate);
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                  bool accumulate);
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                  bool accumulate);
};

template <typename T>
const KernelTable<T>& scalar_table();

// nullptr when the binary was built without the AVX2 unit or the CPU lacks
// AVX2/FMA.
template <typename T>
const KernelTable<T>* avx2_table();

// The table used by the numerics core.
template <typename T>
const KernelTable<T>& active();

bool avx2_supported() noexcept;

}  // namespace ctdg::kernels
