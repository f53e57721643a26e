#include "ctdg/encoders.hpp"

#include <cmath>
#include <unordered_map>

#include "ctdg/error.hpp"

namespace ctdg {

using nn::Shape;
using nn::Tensor;
using nn::Var;

double EncoderConfig::time_alpha() const { return alpha > 0 ? alpha : std::sqrt(static_cast<double>(d_time)); }
double EncoderConfig::time_beta() const { return beta > 0 ? beta : std::sqrt(static_cast<double>(d_time)); }

void EncoderConfig::validate() const {
  if (d_feat == 0 || d_time == 0 || d_freq == 0) throw ConfigError("encoder dimensions must be >= 1");
  if (m == 0) throw ConfigError("scope budget m must be >= 1");
  if (alpha < 0 || beta < 0) throw ConfigError("time-encoding constants must be positive");
}

std::vector<double> time_encode(double dt, std::size_t d_time, double alpha, double beta) {
  std::vector<double> out(d_time);
  for (std::size_t i = 0; i < d_time; ++i) {
    out[i] = std::cos(dt * std::pow(alpha, -static_cast<double>(i) / beta));
  }
  return out;
}

std::vector<double> freq_encode(double freq, std::size_t d_freq) {
  std::vector<double> out(d_freq);
  for (std::size_t s = 0; s < d_freq; ++s) {
    const std::size_t i = s / 2 + 1;  // pair index, 1-based
    const double w = std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d_freq));
    out[s] = (s % 2 == 0) ? std::cos(freq / w) : std::sin(freq / w);
  }
  return out;
}

std::vector<std::uint8_t> identity_encode(std::span<const NodeId> nodes) {
  const std::size_t k = nodes.size();
  std::vector<std::uint8_t> out(k * k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < k; ++i) out[j * k + i] = nodes[j] == nodes[i];
  return out;
}

std::vector<std::uint32_t> compute_frequencies(std::span<const NodeId> nodes) {
  std::unordered_map<NodeId, std::uint32_t> count;
  for (NodeId u : nodes) ++count[u];
  std::vector<std::uint32_t> out(nodes.size());
  for (std::size_t j = 0; j < nodes.size(); ++j) out[j] = count[nodes[j]];
  return out;
}

template <typename T>
NeighborEncoder<T>::NeighborEncoder(const EncoderConfig& cfg, std::size_t d_v, std::size_t d_e,
                                    nn::ParamStore<T>& store, RngStream& init, const std::string& prefix)
    : cfg_(cfg), d_v_(d_v), d_e_(d_e) {
  cfg_.validate();
  wn_ = prefix + "W_n";
  bn_ = prefix + "b_n";
  we_ = prefix + "W_e";
  be_ = prefix + "b_e";
  if (d_v_ > 0) {
    store.add(wn_, nn::xavier_uniform<T>({cfg_.d_feat, d_v_}, init));
    store.add(bn_, nn::zeros<T>({cfg_.d_feat}));
  }
  if (d_e_ > 0) {
    store.add(we_, nn::xavier_uniform<T>({cfg_.d_feat, d_e_}, init));
    store.add(be_, nn::zeros<T>({cfg_.d_feat}));
  }
}

template <typename T>
Var NeighborEncoder<T>::project_node(nn::Tape<T>& tape, nn::ParamStore<T>& store, Var x) const {
  const Shape s = tape.shape(x);
  if (s.size() != 2 || s[1] != d_v_) {
    throw DimensionError("node features " + nn::shape_str(s) + " vs d_v=" + std::to_string(d_v_));
  }
  if (d_v_ == 0) return tape.constant(Tensor<T>({s[0], 0}));
  return tape.gelu(tape.linear(x, tape.param(store, wn_), tape.param(store, bn_)));
}

template <typename T>
Var NeighborEncoder<T>::project_edge(nn::Tape<T>& tape, nn::ParamStore<T>& store, Var x) const {
  const Shape s = tape.shape(x);
  if (s.size() != 2 || s[1] != d_e_) {
    throw DimensionError("edge features " + nn::shape_str(s) + " vs d_e=" + std::to_string(d_e_));
  }
  if (d_e_ == 0) return tape.constant(Tensor<T>({s[0], 0}));
  return tape.gelu(tape.linear(x, tape.param(store, we_), tape.param(store, be_)));
}

template <typename T>
typename NeighborEncoder<T>::Embedding NeighborEncoder<T>::build_neighbor_embedding(
    nn::Tape<T>& tape, nn::ParamStore<T>& store, const TemporalGraph& g, std::span<const double> times,
    std::span<const Neighborhood> nbhds) const {
  const std::size_t B = nbhds.size(), m = cfg_.m, rows = B * m;
  if (times.size() != B) throw DimensionError("one query time per neighborhood required");
  if (g.d_v() != d_v_ || g.d_e() != d_e_) throw DimensionError("graph feature widths differ from the encoder's");
  Embedding out;
  out.mask.assign(rows, 0);
  out.valid.assign(B, 0);
  Tensor<T> xn({rows, d_v_}), xe({rows, d_e_}), te({rows, cfg_.d_time}), fe({rows, cfg_.d_freq}), ie({rows, m});
  Tensor<T> mcol({rows, 1});
  const double a = cfg_.time_alpha(), b = cfg_.time_beta();
  for (std::size_t r = 0; r < B; ++r) {
    const auto& nb = nbhds[r];
    if (nb.size() > m) throw DimensionError("neighborhood larger than the scope budget m");
    out.valid[r] = nb.size();
    const auto freq = compute_frequencies(nb.nbr);
    const auto ident = identity_encode(nb.nbr);
    const std::size_t k = nb.size();
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t row = r * m + j;
      out.mask[row] = 1;
      mcol[row] = T(1);
      if (d_v_ > 0) {
        const float* x = g.node_features.row(nb.nbr[j]);
        for (std::size_t c = 0; c < d_v_; ++c) xn[row * d_v_ + c] = static_cast<T>(x[c]);
      }
      if (d_e_ > 0) {
        const float* x = g.edge_features.row(nb.eid[j]);
        for (std::size_t c = 0; c < d_e_; ++c) xe[row * d_e_ + c] = static_cast<T>(x[c]);
      }
      const auto t = time_encode(times[r] - nb.ts[j], cfg_.d_time, a, b);
      for (std::size_t c = 0; c < cfg_.d_time; ++c) te[row * cfg_.d_time + c] = static_cast<T>(t[c]);
      const auto f = freq_encode(static_cast<double>(freq[j]), cfg_.d_freq);
      for (std::size_t c = 0; c < cfg_.d_freq; ++c) fe[row * cfg_.d_freq + c] = static_cast<T>(f[c]);
      for (std::size_t i = 0; i < k; ++i) ie[row * m + i] = static_cast<T>(ident[j * k + i]);
    }
  }
  Var mask = tape.constant(std::move(mcol));
  std::vector<Var> parts;
  if (d_v_ > 0) parts.push_back(tape.mul(project_node(tape, store, tape.constant(std::move(xn))), mask));
  if (d_e_ > 0) parts.push_back(tape.mul(project_edge(tape, store, tape.constant(std::move(xe))), mask));
  parts.push_back(tape.constant(std::move(te)));
  parts.push_back(tape.constant(std::move(fe)));
  parts.push_back(tape.constant(std::move(ie)));
  out.z = tape.reshape(tape.concat(parts), {B, m, d_enc()});
  return out;
}

template <typename T>
Var NeighborEncoder<T>::build_target_embedding(nn::Tape<T>& tape, nn::ParamStore<T>& store, const TemporalGraph& g,
                                               std::span<const NodeId> targets) const {
  const std::size_t B = targets.size();
  Tensor<T> fixed({B, cfg_.d_time + cfg_.d_freq});
  const auto te = time_encode(0.0, cfg_.d_time, cfg_.time_alpha(), cfg_.time_beta());
  const auto fe = freq_encode(1.0, cfg_.d_freq);
  for (std::size_t r = 0; r < B; ++r) {
    T* row = fixed.data.data() + r * (cfg_.d_time + cfg_.d_freq);
    for (std::size_t c = 0; c < cfg_.d_time; ++c) row[c] = static_cast<T>(te[c]);
    for (std::size_t c = 0; c < cfg_.d_freq; ++c) row[cfg_.d_time + c] = static_cast<T>(fe[c]);
  }
  if (d_v_ == 0) return tape.constant(std::move(fixed));
  Tensor<T> xn({B, d_v_});
  for (std::size_t r = 0; r < B; ++r) {
    const float* x = g.node_features.row(targets[r]);
    for (std::size_t c = 0; c < d_v_; ++c) xn[r * d_v_ + c] = static_cast<T>(x[c]);
  }
  Var h = project_node(tape, store, tape.constant(std::move(xn)));
  return tape.concat({h, tape.constant(std::move(fixed))});
}

template class NeighborEncoder<float>;
template class NeighborEncoder<double>;

}  // namespace ctdg
