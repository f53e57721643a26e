#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ctdg/nn/tensor.hpp"
#include "ctdg/rng.hpp"

namespace ctdg::nn {

using ParamId = std::size_t;

// Named learnable parameters with gradient accumulators and Adam moments.
// The gradient accumulator always has the parameter's shape.
template <typename T>
class ParamStore {
 public:
  ParamId add(std::string name, Tensor<T> init);
  ParamId find(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  const std::string& name(ParamId id) const { return entries_.at(id).name; }
  Tensor<T>& value(ParamId id) { return entries_.at(id).value; }
  const Tensor<T>& value(ParamId id) const { return entries_.at(id).value; }
  Tensor<T>& grad(ParamId id) { return entries_.at(id).grad; }
  const Tensor<T>& grad(ParamId id) const { return entries_.at(id).grad; }

  void zero_grad();
  std::size_t num_scalars() const;

  // Explicit reduction used when independent tapes ran on clones.
  void accumulate_grads_from(const ParamStore& other);

  // Converts values (not moments) to another precision, keeping names.
  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

  std::size_t adam_steps() const noexcept { return adam_t_; }

 private:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> m;
    Tensor<T> v;
  };
  std::vector<Entry> entries_;
  std::size_t adam_t_ = 0;

  template <typename U>
  friend void adam_step(ParamStore<U>&, double, double, double, double);
};

// Standard Adam with bias correction; clears gradients afterwards.
template <typename T>
void adam_step(ParamStore<T>& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

// Initializers.
template <typename T>
Tensor<T> xavier_uniform(const Shape& shape, RngStream& rng);
template <typename T>
Tensor<T> zeros(const Shape& shape) {
  return Tensor<T>(shape, T(0));
}
template <typename T>
Tensor<T> ones(const Shape& shape) {
  return Tensor<T>(shape, T(1));
}

// Checkpoints: one binary matrix file per parameter (same layout as the
// feature files) plus manifest.json naming each file and its shape.
template <typename T>
void save_checkpoint(const ParamStore<T>& store, const std::filesystem::path& dir);
template <typename T>
void load_checkpoint(ParamStore<T>& store, const std::filesystem::path& dir);

}  // namespace ctdg::nn
