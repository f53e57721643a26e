#include <cstdlib>
#include <string_view>

#include "ctdg/kernels.hpp"

namespace ctdg::kernels {

#if defined(CTDG_HAVE_AVX2)
namespace detail {
const KernelTable<float>* avx2_float();
const KernelTable<double>* avx2_double();
}  // namespace detail
#endif

bool avx2_supported() noexcept {
#if defined(CTDG_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok;
#else
  return false;
#endif
}

template <>
const KernelTable<float>* avx2_table<float>() {
#if defined(CTDG_HAVE_AVX2)
  return avx2_supported() ? detail::avx2_float() : nullptr;
#else
  return nullptr;
#endif
}

template <>
const KernelTable<double>* avx2_table<double>() {
#if defined(CTDG_HAVE_AVX2)
  return avx2_supported() ? detail::avx2_double() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

bool scalar_forced() {
  const char* env = std::getenv("CTDG_KERNELS");
  return env != nullptr && std::string_view(env) == "scalar";
}

template <typename T>
const KernelTable<T>& select() {
  if (!scalar_forced()) {
    if (const auto* t = avx2_table<T>()) return *t;
  }
  return scalar_table<T>();
}

}  // namespace

template <>
const KernelTable<float>& active<float>() {
  static const KernelTable<float>& t = select<float>();
  return t;
}

template <>
const KernelTable<double>& active<double>() {
  static const KernelTable<double>& t = select<double>();
  return t;
}

}  // namespace ctdg::kernels
