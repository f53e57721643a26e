#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctdg/finder.hpp"
#include "ctdg/graph.hpp"
#include "ctdg/nn/tape.hpp"

namespace ctdg {

enum class AggregatorKind { tgat, graphmixer };
AggregatorKind parse_aggregator(std::string_view name);
std::string_view aggregator_name(AggregatorKind k);

struct ModelConfig {
  AggregatorKind aggregator = AggregatorKind::graphmixer;
  std::size_t layers = 1;
  std::size_t d = 100;       // hidden width
  std::size_t d_time = 100;  // time-encoding width
  std::size_t n = 10;        // neighbor slots per target
  // Fixed time encoding constants for graphmixer; 0 selects sqrt(d_time).
  double alpha = 0.0;
  double beta = 0.0;
  bool token_mixing = true;
  void validate() const;
};

// Neighbors chosen for each of P parents: n slots per parent, ascending
// slot order, -1 where a parent has fewer than n.
struct Hop {
  std::size_t n = 0;
  std::vector<std::int64_t> nbr;
  std::vector<std::int64_t> eid;
  std::vector<double> ts;
  std::vector<std::uint8_t> mask;
  std::size_t parents() const noexcept { return n ? nbr.size() / n : 0; }
};

// Row i takes entries picks[i*n + j] (slot indices, -1 to skip) of nbhds[i];
// an empty picks takes the first n entries of each neighborhood.
Hop make_hop(std::span<const Neighborhood> nbhds, std::size_t n, std::span<const std::int32_t> picks = {});
// Parents of the next hop: the neighbors listed in h, at their event times.
void hop_targets(const Hop& h, std::vector<NodeId>& nodes, std::vector<double>& times);

struct TgatOut {
  nn::Var h;       // [P, d]
  nn::Var scores;  // [P, n] unnormalized attention a
  nn::Var tau;     // [P, n] exp(a)
  nn::Var V;       // [P, n, d]
  nn::Var att;     // [P, n] softmax over valid slots
};

struct MixerOut {
  nn::Var h;  // [P, d] mean over all n slots
  nn::Var Y;  // [P, n, d] per-slot mixer output, padded slots zero
};

// One aggregation inside a forward pass: embeddings of the parents of
// hops[hop] at some layer, with the terms the sample loss needs.
struct AggRecord {
  std::size_t hop = 0;
  nn::Var h;
  nn::Var tau;  // tgat only
  nn::Var V;    // tgat value rows, or graphmixer per-slot output
};

struct Forward {
  nn::Var h;  // [B, d] root embeddings
  std::vector<AggRecord> records;
};

template <typename T>
class TemporalModel {
 public:
  TemporalModel(const ModelConfig& cfg, std::size_t d_v, std::size_t d_e, nn::ParamStore<T>& store, RngStream& init,
                const std::string& prefix = "model.");

  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t d_in(std::size_t layer) const noexcept { return layer == 1 ? d_v_ : cfg_.d; }
  std::size_t d_msg(std::size_t layer) const noexcept { return d_in(layer) + d_e_ + cfg_.d_time; }

  // Learnable cos(dt w + b) of the given tgat layer; dt is [R, 1].
  nn::Var tgat_time_encode(nn::Tape<T>& tape, nn::ParamStore<T>& store, std::size_t layer, nn::Var dt) const;

  // Single-head attention. h_prev [P, d_in], M [P, n, d_msg]. Rows with no
  // valid message return the value projection of the self message.
  TgatOut tgat_layer(nn::Tape<T>& tape, nn::ParamStore<T>& store, std::size_t layer, nn::Var h_prev, nn::Var M,
                        std::span<const std::uint8_t> mask) const;

  // Input projection to d, one token/channel mixer, padded slots zeroed,
  // then the mean over all n slots.
  MixerOut graphmixer_layer(nn::Tape<T>& tape, nn::ParamStore<T>& store, std::size_t layer, nn::Var M,
                            std::span<const std::uint8_t> mask) const;

  // W2 relu(W1 [h_u | h_v] + b1) + b2 -> [B].
  nn::Var predict(nn::Tape<T>& tape, nn::ParamStore<T>& store, nn::Var hu, nn::Var hv) const;

  // Root embeddings at (roots[i], times[i]); hops.size() must equal layers.
  // hops[k] lists the neighbors of depth-k nodes, whose own query times are
  // the event times stored in hops[k-1].
  Forward embed(nn::Tape<T>& tape, nn::ParamStore<T>& store, const TemporalGraph& g, std::span<const NodeId> roots,
                std::span<const double> times, std::span<const Hop> hops) const;

 private:
  ModelConfig cfg_;
  std::size_t d_v_;
  std::size_t d_e_;
  std::string prefix_;
  std::string name(std::size_t layer, const char* s) const { return prefix_ + "l" + std::to_string(layer) + "." + s; }
};

// mean over the batch of softplus(-pos) + softplus(neg).
template <typename T>
nn::Var model_loss(nn::Tape<T>& tape, nn::Var pos, nn::Var neg);

}  // namespace ctdg
