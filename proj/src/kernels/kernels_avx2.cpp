// Compiled with -mavx2 -mfma. Only reached after a CPUID check.
#include "ctdg/kernels.hpp"

#include <immintrin.h>

#include <algorithm>
#include <vector>

namespace ctdg::kernels {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using Reg = __m256;
  static constexpr std::size_t width = 8;
  static Reg zero() { return _mm256_setzero_ps(); }
  static Reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, Reg v) { _mm256_storeu_ps(p, v); }
  static Reg set1(float v) { return _mm256_set1_ps(v); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_ps(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_ps(a, b); }
  static float hsum(Reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

template <>
struct Vec<double> {
  using Reg = __m256d;
  static constexpr std::size_t width = 4;
  static Reg zero() { return _mm256_setzero_pd(); }
  static Reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, Reg v) { _mm256_storeu_pd(p, v); }
  static Reg set1(double v) { return _mm256_set1_pd(v); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_pd(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_pd(a, b); }
  static double hsum(Reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
  }
};

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t w = V::width;
  auto acc0 = V::zero();
  auto acc1 = V::zero();
  std::size_t i = 0;
  for (; i + 2 * w <= n; i += 2 * w) {
    acc0 = V::fmadd(V::load(a + i), V::load(b + i), acc0);
    acc1 = V::fmadd(V::load(a + i + w), V::load(b + i + w), acc1);
  }
  for (; i + w <= n; i += w) acc0 = V::fmadd(V::load(a + i), V::load(b + i), acc0);
  T s = V::hsum(V::add(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  using V = Vec<T>;
  constexpr std::size_t w = V::width;
  const auto va = V::set1(alpha);
  std::size_t i = 0;
  for (; i + w <= n; i += w) V::store(y + i, V::fmadd(va, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// Register tile: MR rows of C by NV vectors, accumulated over kc steps.
// a(i, p) = a[i * rs + p * cs], so a transposed A needs no copy.
template <typename T, int MR, int NV>
void tile(std::size_t kc, const T* a, std::size_t rs, std::size_t cs, const T* b, std::size_t ldb, T* c,
          std::size_t ldc, bool load_c) {
  using V = Vec<T>;
  constexpr std::size_t w = V::width;
  typename V::Reg acc[MR][NV];
  for (int r = 0; r < MR; ++r)
    for (int v = 0; v < NV; ++v) acc[r][v] = load_c ? V::load(c + r * ldc + v * w) : V::zero();
  for (std::size_t p = 0; p < kc; ++p) {
    typename V::Reg bv[NV];
    for (int v = 0; v < NV; ++v) bv[v] = V::load(b + p * ldb + v * w);
    for (int r = 0; r < MR; ++r) {
      const auto av = V::set1(a[r * rs + p * cs]);
      for (int v = 0; v < NV; ++v) acc[r][v] = V::fmadd(av, bv[v], acc[r][v]);
    }
  }
  for (int r = 0; r < MR; ++r)
    for (int v = 0; v < NV; ++v) V::store(c + r * ldc + v * w, acc[r][v]);
}

template <typename T, int NV>
void tile_rows(std::size_t mr, std::size_t kc, const T* a, std::size_t rs, std::size_t cs, const T* b,
               std::size_t ldb, T* c, std::size_t ldc, bool load_c) {
  switch (mr) {
    case 4: return tile<T, 4, NV>(kc, a, rs, cs, b, ldb, c, ldc, load_c);
    case 3: return tile<T, 3, NV>(kc, a, rs, cs, b, ldb, c, ldc, load_c);
    case 2: return tile<T, 2, NV>(kc, a, rs, cs, b, ldb, c, ldc, load_c);
    default: return tile<T, 1, NV>(kc, a, rs, cs, b, ldb, c, ldc, load_c);
  }
}

// C[m,n] (+)= A * B[k,n] with A addressed through strides. Blocks of k keep
// the B panel cache-resident; every output still sums p in order.
template <typename T>
void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t rs, std::size_t cs,
                  const T* b, T* c, bool accumulate) {
  constexpr std::size_t w = Vec<T>::width, kc_max = 256, mr_max = 4;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    return;
  }
  for (std::size_t p0 = 0; p0 < k; p0 += kc_max) {
    const std::size_t kc = std::min(kc_max, k - p0);
    const bool load = accumulate || p0 > 0;
    const T* ab = a + p0 * cs;
    const T* bb = b + p0 * n;
    for (std::size_t i0 = 0; i0 < m; i0 += mr_max) {
      const std::size_t mr = std::min(mr_max, m - i0);
      const T* ai = ab + i0 * rs;
      T* ci = c + i0 * n;
      std::size_t j = 0;
      for (; j + 2 * w <= n; j += 2 * w) tile_rows<T, 2>(mr, kc, ai, rs, cs, bb + j, n, ci + j, n, load);
      for (; j + w <= n; j += w) tile_rows<T, 1>(mr, kc, ai, rs, cs, bb + j, n, ci + j, n, load);
      for (; j < n; ++j)
        for (std::size_t r = 0; r < mr; ++r) {
          T s = load ? ci[r * n + j] : T(0);
          for (std::size_t p = 0; p < kc; ++p) s += ai[r * rs + p * cs] * bb[p * n + j];
          ci[r * n + j] = s;
        }
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  thread_local std::vector<T> bt;
  bt.resize(n * k);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_strided(m, n, k, a, k, 1, bt.data(), c, accumulate);
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  gemm_strided(m, n, k, a, k, 1, b, c, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  gemm_strided(m, n, k, a, 1, m, b, c, accumulate);
}

template <typename T>
const KernelTable<T> kTable{"avx2", &dot<T>, &axpy<T>, &gemm_nt<T>, &gemm_nn<T>, &gemm_tn<T>};

}  // namespace

namespace detail {
const KernelTable<float>* avx2_float() { return &kTable<float>; }
const KernelTable<double>* avx2_double() { return &kTable<double>; }
}  // namespace detail

}  // namespace ctdg::kernels
