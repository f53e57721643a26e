#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctdg/finder.hpp"
#include "ctdg/graph.hpp"
#include "ctdg/nn/tape.hpp"

namespace ctdg {

struct EncoderConfig {
  std::size_t d_feat = 8;
  std::size_t d_time = 8;
  std::size_t d_freq = 8;
  std::size_t m = 25;  // identity-encoding width
  // 0 selects the default sqrt(d_time).
  double alpha = 0.0;
  double beta = 0.0;

  double time_alpha() const;
  double time_beta() const;
  void validate() const;
};

// cos(dt * alpha^(-(i-1)/beta)) for i = 1..d.
std::vector<double> time_encode(double dt, std::size_t d_time, double alpha, double beta);
// Slot pairs (2i-1, 2i), i = 1..: cos then sin of freq / 10000^(2i/d).
std::vector<double> freq_encode(double freq, std::size_t d_freq);
// Row-major k x k 0/1 matrix, entry (j, i) = [nodes[j] == nodes[i]].
std::vector<std::uint8_t> identity_encode(std::span<const NodeId> nodes);
// Multiplicity of each entry's node id within the list.
std::vector<std::uint32_t> compute_frequencies(std::span<const NodeId> nodes);

// Learnable parts of the neighbor encoder (the feature projections) plus the
// fixed encodings. Parameters live in the caller's store under `prefix`.
template <typename T>
class NeighborEncoder {
 public:
  NeighborEncoder(const EncoderConfig& cfg, std::size_t d_v, std::size_t d_e, nn::ParamStore<T>& store,
                  RngStream& init, const std::string& prefix = "enc.");

  const EncoderConfig& config() const noexcept { return cfg_; }
  std::size_t proj_v() const noexcept { return d_v_ > 0 ? cfg_.d_feat : 0; }
  std::size_t proj_e() const noexcept { return d_e_ > 0 ? cfg_.d_feat : 0; }
  // Row width of the neighbor embedding.
  std::size_t d_enc() const noexcept { return proj_v() + proj_e() + cfg_.d_time + cfg_.d_freq + cfg_.m; }
  // Width of the target embedding.
  std::size_t d_target() const noexcept { return proj_v() + cfg_.d_time + cfg_.d_freq; }

  // GeLU(W x + b) per row; x is [rows, d_v] / [rows, d_e]. Absent features
  // give a [rows, 0] result.
  nn::Var project_node(nn::Tape<T>& tape, nn::ParamStore<T>& store, nn::Var x) const;
  nn::Var project_edge(nn::Tape<T>& tape, nn::ParamStore<T>& store, nn::Var x) const;

  struct Embedding {
    nn::Var z;                        // [B, m, d_enc]; padded rows are zero
    std::vector<std::uint8_t> mask;   // B * m
    std::vector<std::size_t> valid;   // per row
  };

  // Neighborhood i belongs to target (targets[i], times[i]).
  Embedding build_neighbor_embedding(nn::Tape<T>& tape, nn::ParamStore<T>& store, const TemporalGraph& g,
                                     std::span<const double> times, std::span<const Neighborhood> nbhds) const;

  // [B, d_target] = [h_v | TE(0) | FE(1)].
  nn::Var build_target_embedding(nn::Tape<T>& tape, nn::ParamStore<T>& store, const TemporalGraph& g,
                                 std::span<const NodeId> targets) const;

 private:
  EncoderConfig cfg_;
  std::size_t d_v_;
  std::size_t d_e_;
  std::string wn_, bn_, we_, be_;
};

}  // namespace ctdg
