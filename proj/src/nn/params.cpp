#include "ctdg/nn/params.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "ctdg/matrix_io.hpp"

namespace ctdg::nn {

template <typename T>
ParamId ParamStore<T>::add(std::string name, Tensor<T> init) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  Entry e;
  e.name = std::move(name);
  e.grad = Tensor<T>(init.shape, T(0));
  e.m = Tensor<T>(init.shape, T(0));
  e.v = Tensor<T>(init.shape, T(0));
  e.value = std::move(init);
  entries_.push_back(std::move(e));
  return entries_.size() - 1;
}

template <typename T>
bool ParamStore<T>::contains(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

template <typename T>
ParamId ParamStore<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  throw IndexError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) std::fill(e.grad.data.begin(), e.grad.data.end(), T(0));
}

template <typename T>
std::size_t ParamStore<T>::num_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

template <typename T>
void ParamStore<T>::accumulate_grads_from(const ParamStore& other) {
  if (other.size() != size()) throw DimensionError("gradient merge between different parameter sets");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& g = entries_[i].grad;
    const auto& o = other.entries_[i].grad;
    if (g.shape != o.shape) throw DimensionError("gradient merge: shape mismatch for " + entries_[i].name);
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += o[j];
  }
}

template <typename T>
void adam_step(ParamStore<T>& store, double lr, double beta1, double beta2, double eps) {
  ++store.adam_t_;
  const double t = static_cast<double>(store.adam_t_);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (auto& e : store.entries_) {
    for (std::size_t j = 0; j < e.value.size(); ++j) {
      const double g = e.grad[j];
      const double m = beta1 * e.m[j] + (1.0 - beta1) * g;
      const double v = beta2 * e.v[j] + (1.0 - beta2) * g * g;
      e.m[j] = static_cast<T>(m);
      e.v[j] = static_cast<T>(v);
      const double step = lr * (m / c1) / (std::sqrt(v / c2) + eps);
      e.value[j] = static_cast<T>(e.value[j] - step);
      e.grad[j] = T(0);
    }
  }
}

template <typename T>
Tensor<T> xavier_uniform(const Shape& shape, RngStream& rng) {
  Tensor<T> t(shape);
  const double fan_out = shape.empty() ? 1.0 : static_cast<double>(shape[0]);
  const double fan_in = shape.size() < 2 ? 1.0 : static_cast<double>(numel(shape) / shape[0]);
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : t.data) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * a);
  return t;
}

template <typename T>
void save_checkpoint(const ParamStore<T>& store, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["precision"] = sizeof(T) == 4 ? "f32" : "f64";
  manifest["params"] = nlohmann::json::array();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& v = store.value(i);
    const std::string file = "p" + std::to_string(i) + ".bin";
    write_matrix(dir / file, v.outer(), v.inner(), v.data.data());
    manifest["params"].push_back({{"name", store.name(i)}, {"file", file}, {"shape", v.shape}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw ConfigError("cannot write checkpoint manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

template <typename T>
void load_checkpoint(ParamStore<T>& store, const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ConfigError("missing checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest: " + std::string(e.what()));
  }
  for (const auto& p : manifest.at("params")) {
    const std::string name = p.at("name");
    const ParamId id = store.find(name);
    const Shape shape = p.at("shape").get<Shape>();
    if (shape != store.value(id).shape) {
      throw SchemaError("checkpoint shape " + shape_str(shape) + " for '" + name + "' does not match model " +
                        shape_str(store.value(id).shape));
    }
    MatrixFile m = read_matrix(dir / p.at("file").get<std::string>());
    auto& v = store.value(id);
    if (m.rows * m.cols != v.size()) throw FormatError("checkpoint payload size mismatch for '" + name + "'");
    if (m.type == 1) v.data.assign(m.f32.begin(), m.f32.end());
    else v.data.assign(m.f64.begin(), m.f64.end());
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template void adam_step(ParamStore<float>&, double, double, double, double);
template void adam_step(ParamStore<double>&, double, double, double, double);
template Tensor<float> xavier_uniform(const Shape&, RngStream&);
template Tensor<double> xavier_uniform(const Shape&, RngStream&);
template void save_checkpoint(const ParamStore<float>&, const std::filesystem::path&);
template void save_checkpoint(const ParamStore<double>&, const std::filesystem::path&);
template void load_checkpoint(ParamStore<float>&, const std::filesystem::path&);
template void load_checkpoint(ParamStore<double>&, const std::filesystem::path&);

}  // namespace ctdg::nn
