#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>


#include "ctdg/nn/tape.hpp"

namespace testutil {

using ctdg::nn::ParamStore;
using ctdg::nn::Tape;
using ctdg::nn::Tensor;
using ctdg::nn::Var;

// Builds the scalar loss on a fresh tape; inputs are registered with
// tape.input() so they receive gradients too.
using LossFn = std::function<Var(Tape<double>&, ParamStore<double>&, const std::vector<Var>&)>;

struct GradCheckResult {
  double worst_excess = 0.0;  // max over entries of |a-n| - (atol + rtol*|n|)
  std::string where;
  bool ok() const { return worst_excess <= 0.0; }
};

inline double eval_loss(const LossFn& f, ParamStore<double>& store, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var> iv;
  for (const auto& t : inputs) iv.push_back(tape.constant(t));
  return tape.value(f(tape, store, iv)).item();
}

// Central finite differences over every parameter and input entry.
inline GradCheckResult gradcheck(const LossFn& f, ParamStore<double>& store, std::vector<Tensor<double>> inputs,
                                 double rtol = 1e-4, double atol = 1e-7, double h = 1e-6) {
  store.zero_grad();
  Tape<double> tape;
  std::vector<Var> iv;
  for (const auto& t : inputs) iv.push_back(tape.input(t));
  tape.backward(f(tape, store, iv));

  GradCheckResult res;
  res.worst_excess = -1.0;
  auto check = [&](double a, double n, const std::string& where) {
    const double excess = std::abs(a - n) - (atol + rtol * std::abs(n));
    if (excess > res.worst_excess) {
      res.worst_excess = excess;
      res.where = where + " analytic=" + std::to_string(a) + " numeric=" + std::to_string(n);
    }
  };
  for (std::size_t p = 0; p < store.size(); ++p) {
    auto& v = store.value(p);
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double keep = v[j];
      v[j] = keep + h;
      const double up = eval_loss(f, store, inputs);
      v[j] = keep - h;
      const double dn = eval_loss(f, store, inputs);
      v[j] = keep;
      check(store.grad(p)[j], (up - dn) / (2 * h), store.name(p) + "[" + std::to_string(j) + "]");
    }
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto g = tape.grad(iv[i]);
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double keep = inputs[i][j];
      inputs[i][j] = keep + h;
      const double up = eval_loss(f, store, inputs);
      inputs[i][j] = keep - h;
      const double dn = eval_loss(f, store, inputs);
      inputs[i][j] = keep;
      check(g[j], (up - dn) / (2 * h), "input" + std::to_string(i) + "[" + std::to_string(j) + "]");
    }
  }
  store.zero_grad();
  return res;
}

template <typename T>
Tensor<T> random_tensor(ctdg::nn::Shape shape, ctdg::RngStream& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(scale * rng.normal());
  return t;
}

}  // namespace testutil
