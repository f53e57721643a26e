#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace ctdg {

// SplitMix64 finalizer. Used both as the stream generator and as the key
// derivation hash, so that every random draw is a pure function of
// (seed, stream key, draw counter).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept {
  return mix64(a + 0x9e3779b97f4a7c15ULL + mix64(b));
}

constexpr std::uint64_t hash_tag(std::string_view tag) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

// Counter-based random stream. Two streams built from the same key produce
// the same sequence regardless of which thread or in what order they run.
class RngStream {
 public:
  constexpr RngStream() noexcept = default;
  constexpr explicit RngStream(std::uint64_t key) noexcept : key_(mix64(key)) {}
  constexpr RngStream(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(hash_combine(seed, stream)) {}
  constexpr RngStream(std::uint64_t seed, std::uint64_t stream, std::uint64_t sub) noexcept
      : key_(hash_combine(hash_combine(seed, stream), sub)) {}

  constexpr std::uint64_t next_u64() noexcept {
    return mix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_);
  }

  // Uniform in [0, 1).
  constexpr double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, bound); bound > 0. Lemire's multiply-shift with
  // rejection, so the result is exactly uniform.
  std::uint64_t below(std::uint64_t bound) noexcept {
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Standard normal via Box-Muller (one value per call, portable across
  // standard libraries unlike std::normal_distribution).
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  constexpr std::uint64_t draws() const noexcept { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace ctdg
