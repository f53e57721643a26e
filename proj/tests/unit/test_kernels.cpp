#include <cmath>
#include <vector>

#include <doctest.h>

#include "ctdg/kernels.hpp"
#include "ctdg/rng.hpp"

using namespace ctdg;

namespace {

template <typename T>
std::vector<T> rand_vec(std::size_t n, RngStream& rng) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.normal());
  return v;
}

template <typename T>
double tol();
template <>
double tol<float>() {
  return 2e-5;
}
template <>
double tol<double>() {
  return 1e-12;
}

template <typename T>
void close(const std::vector<T>& a, const std::vector<T>& b, double scale) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(double(a[i]) - double(b[i])) <= tol<T>() * scale);
}

template <typename T>
void compare_tables() {
  const auto& ref = kernels::scalar_table<T>();
  const auto* simd = kernels::avx2_table<T>();
  if (simd == nullptr) {
    MESSAGE("no AVX2 on this host; SIMD equivalence not exercised");
    return;
  }
  CHECK(simd->name == "avx2");
  RngStream rng(42);
  const std::size_t sizes[] = {1, 3, 7, 8, 9, 15, 16, 17, 31, 33, 64, 100};
  for (std::size_t n : sizes) {
    auto a = rand_vec<T>(n, rng), b = rand_vec<T>(n, rng);
    const double scale = std::sqrt(double(n)) * 4;
    CHECK(std::abs(double(ref.dot(a.data(), b.data(), n)) - double(simd->dot(a.data(), b.data(), n))) <=
          tol<T>() * scale);
    auto y1 = rand_vec<T>(n, rng);
    auto y2 = y1;
    ref.axpy(T(0.7), a.data(), y1.data(), n);
    simd->axpy(T(0.7), a.data(), y2.data(), n);
    close(y1, y2, 4);
  }
  for (std::size_t m : {1, 5, 8}) {
    for (std::size_t n : {1, 4, 7, 13}) {
      for (std::size_t k : {1, 8, 19}) {
        const double scale = std::sqrt(double(k)) * 6;
        for (bool acc : {false, true}) {
          auto a = rand_vec<T>(m * k, rng);
          auto bt = rand_vec<T>(n * k, rng);
          auto c1 = rand_vec<T>(m * n, rng);
          auto c2 = c1;
          ref.gemm_nt(m, n, k, a.data(), bt.data(), c1.data(), acc);
          simd->gemm_nt(m, n, k, a.data(), bt.data(), c2.data(), acc);
          close(c1, c2, scale);
          c2 = c1;
          ref.gemm_nn(m, n, k, a.data(), bt.data(), c1.data(), acc);
          simd->gemm_nn(m, n, k, a.data(), bt.data(), c2.data(), acc);
          close(c1, c2, scale);
          c2 = c1;
          ref.gemm_tn(m, n, k, a.data(), bt.data(), c1.data(), acc);
          simd->gemm_tn(m, n, k, a.data(), bt.data(), c2.data(), acc);
          close(c1, c2, scale);
        }
      }
    }
  }
}

}  // namespace

TEST_CASE("scalar reference gemm matches naive triple loop") {
  RngStream rng(1);
  const std::size_t m = 3, n = 4, k = 5;
  auto a = rand_vec<double>(m * k, rng), b = rand_vec<double>(k * n, rng);
  std::vector<double> c(m * n);
  kernels::scalar_table<double>().gemm_nn(m, n, k, a.data(), b.data(), c.data(), false);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      CHECK(c[i * n + j] == doctest::Approx(s));
    }
}

TEST_CASE("AVX2 kernels agree with the scalar reference (float)") { compare_tables<float>(); }
TEST_CASE("AVX2 kernels agree with the scalar reference (double)") { compare_tables<double>(); }

TEST_CASE("active table is one of the known variants") {
  const auto name = kernels::active<double>().name;
  CHECK((name == "scalar" || name == "avx2"));
}
