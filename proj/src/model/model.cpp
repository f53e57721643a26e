#include "ctdg/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ctdg/encoders.hpp"
#include "ctdg/error.hpp"

namespace ctdg {

using nn::Shape;
using nn::Tensor;
using nn::Var;

AggregatorKind parse_aggregator(std::string_view name) {
  if (name == "tgat") return AggregatorKind::tgat;
  if (name == "graphmixer") return AggregatorKind::graphmixer;
  throw ConfigError("unknown aggregator '" + std::string(name) + "' (tgat, graphmixer)");
}

std::string_view aggregator_name(AggregatorKind k) { return k == AggregatorKind::tgat ? "tgat" : "graphmixer"; }

Hop make_hop(std::span<const Neighborhood> nbhds, std::size_t n, std::span<const std::int32_t> picks) {
  if (!picks.empty() && picks.size() != nbhds.size() * n) throw DimensionError("one pick row per neighborhood required");
  Hop h;
  h.n = n;
  h.nbr.assign(nbhds.size() * n, -1);
  h.eid.assign(nbhds.size() * n, -1);
  h.ts.assign(nbhds.size() * n, 0.0);
  h.mask.assign(nbhds.size() * n, 0);
  for (std::size_t i = 0; i < nbhds.size(); ++i) {
    const auto& nb = nbhds[i];
    for (std::size_t j = 0; j < n; ++j) {
      const std::int64_t s = picks.empty() ? (j < nb.size() ? std::int64_t(j) : -1) : picks[i * n + j];
      if (s < 0) continue;
      if (static_cast<std::size_t>(s) >= nb.size()) throw IndexError("pick beyond the neighborhood");
      const std::size_t o = i * n + j;
      h.nbr[o] = nb.nbr[static_cast<std::size_t>(s)];
      h.eid[o] = nb.eid[static_cast<std::size_t>(s)];
      h.ts[o] = nb.ts[static_cast<std::size_t>(s)];
      h.mask[o] = 1;
    }
  }
  return h;
}

void hop_targets(const Hop& h, std::vector<NodeId>& nodes, std::vector<double>& times) {
  nodes.resize(h.nbr.size());
  times.resize(h.nbr.size());
  for (std::size_t i = 0; i < h.nbr.size(); ++i) {
    // Padding queries node 0 at time -inf, which has no neighbors.
    nodes[i] = h.mask[i] ? static_cast<NodeId>(h.nbr[i]) : 0;
    times[i] = h.mask[i] ? h.ts[i] : -std::numeric_limits<double>::infinity();
  }
}

void ModelConfig::validate() const {
  if (layers == 0) throw ConfigError("layers must be >= 1");
  if (d == 0 || d_time == 0) throw ConfigError("hidden and time-encoding widths must be >= 1");
  if (n == 0) throw ConfigError("neighbor slots n must be >= 1");
  if (alpha < 0 || beta < 0) throw ConfigError("time-encoding constants must be positive");
}

template <typename T>
TemporalModel<T>::TemporalModel(const ModelConfig& cfg, std::size_t d_v, std::size_t d_e, nn::ParamStore<T>& store,
                                RngStream& init, const std::string& prefix)
    : cfg_(cfg), d_v_(d_v), d_e_(d_e), prefix_(prefix) {
  cfg_.validate();
  const std::size_t d = cfg_.d, dT = cfg_.d_time, n = cfg_.n;
  for (std::size_t l = 1; l <= cfg_.layers; ++l) {
    if (cfg_.aggregator == AggregatorKind::tgat) {
      // Frequencies spread over 1 .. 1e-9, the usual learnable-encoding start.
      Tensor<T> w({dT});
      for (std::size_t i = 0; i < dT; ++i)
        w[i] = static_cast<T>(std::pow(10.0, -9.0 * double(i) / double(std::max<std::size_t>(dT - 1, 1))));
      store.add(name(l, "tw"), std::move(w));
      store.add(name(l, "tb"), nn::zeros<T>({dT}));
      store.add(name(l, "Wq"), nn::xavier_uniform<T>({d, d_in(l) + dT}, init));
      store.add(name(l, "bq"), nn::zeros<T>({d}));
      store.add(name(l, "Wk"), nn::xavier_uniform<T>({d, d_msg(l)}, init));
      store.add(name(l, "bk"), nn::zeros<T>({d}));
      store.add(name(l, "Wv"), nn::xavier_uniform<T>({d, d_msg(l)}, init));
      store.add(name(l, "bv"), nn::zeros<T>({d}));
    } else {
      store.add(name(l, "Wp"), nn::xavier_uniform<T>({d, d_msg(l)}, init));
      store.add(name(l, "bp"), nn::zeros<T>({d}));
      store.add(name(l, "W1t"), nn::xavier_uniform<T>({n, n}, init));
      store.add(name(l, "b1t"), nn::zeros<T>({n}));
      store.add(name(l, "W2t"), nn::xavier_uniform<T>({n, n}, init));
      store.add(name(l, "b2t"), nn::zeros<T>({n}));
      store.add(name(l, "W1c"), nn::xavier_uniform<T>({d, d}, init));
      store.add(name(l, "b1c"), nn::zeros<T>({d}));
      store.add(name(l, "W2c"), nn::xavier_uniform<T>({d, d}, init));
      store.add(name(l, "b2c"), nn::zeros<T>({d}));
    }
  }
  store.add(prefix_ + "pred.W1", nn::xavier_uniform<T>({d, 2 * d}, init));
  store.add(prefix_ + "pred.b1", nn::zeros<T>({d}));
  store.add(prefix_ + "pred.W2", nn::xavier_uniform<T>({1, d}, init));
  store.add(prefix_ + "pred.b2", nn::zeros<T>({1}));
}

template <typename T>
Var TemporalModel<T>::tgat_time_encode(nn::Tape<T>& tape, nn::ParamStore<T>& store, std::size_t layer, Var dt) const {
  const Shape s = tape.shape(dt);
  if (s.size() != 2 || s[1] != 1) throw DimensionError("time deltas must be [R, 1], got " + nn::shape_str(s));
  return tape.cos(tape.add(tape.mul(dt, tape.param(store, name(layer, "tw"))), tape.param(store, name(layer, "tb"))));
}

namespace {

template <typename T>
Var mask_col(nn::Tape<T>& tape, std::span<const std::uint8_t> mask, std::size_t P, std::size_t n) {
  Tensor<T> mc({P, n, 1});
  for (std::size_t i = 0; i < P * n; ++i) mc[i] = mask[i] ? T(1) : T(0);
  return tape.constant(std::move(mc));
}

}  // namespace

template <typename T>
TgatOut TemporalModel<T>::tgat_layer(nn::Tape<T>& tape, nn::ParamStore<T>& store, std::size_t layer, Var h_prev,
                                        Var M, std::span<const std::uint8_t> mask) const {
  const Shape sm = tape.shape(M);
  if (sm.size() != 3 || sm[2] != d_msg(layer)) throw DimensionError("tgat messages " + nn::shape_str(sm));
  const std::size_t P = sm[0], n = sm[1], d = cfg_.d;
  if (tape.shape(h_prev) != Shape{P, d_in(layer)}) throw DimensionError("tgat target state " + nn::shape_str(tape.shape(h_prev)));
  if (mask.size() != P * n) throw DimensionError("tgat mask size mismatch");
  Tensor<T> inv({P, 1}), empty({P, 1});
  for (std::size_t r = 0; r < P; ++r) {
    const auto k = static_cast<std::size_t>(std::count(mask.begin() + r * n, mask.begin() + (r + 1) * n, 1));
    inv[r] = T(1) / static_cast<T>(std::sqrt(double(std::max<std::size_t>(k, 1))));
    empty[r] = k == 0 ? T(1) : T(0);
  }
  Var te0 = tgat_time_encode(tape, store, layer, tape.constant(Tensor<T>({P, 1})));
  Var q = tape.linear(tape.concat({h_prev, te0}), tape.param(store, name(layer, "Wq")), tape.param(store, name(layer, "bq")));
  Var K = tape.linear(M, tape.param(store, name(layer, "Wk")), tape.param(store, name(layer, "bk")));
  TgatOut out;
  out.V = tape.linear(M, tape.param(store, name(layer, "Wv")), tape.param(store, name(layer, "bv")));
  out.scores = tape.mul(tape.reshape(tape.bmm(K, tape.reshape(q, {P, d, 1})), {P, n}), tape.constant(std::move(inv)));
  out.att = tape.softmax(out.scores, mask);
  out.tau = tape.exp(out.scores);
  Var h = tape.reshape(tape.bmm(tape.reshape(out.att, {P, 1, n}), out.V), {P, d});
  Var self = tape.concat({h_prev, tape.constant(Tensor<T>({P, d_e_})), te0});
  Var sv = tape.linear(self, tape.param(store, name(layer, "Wv")), tape.param(store, name(layer, "bv")));
  out.h = tape.add(h, tape.mul(sv, tape.constant(std::move(empty))));
  return out;
}

template <typename T>
MixerOut TemporalModel<T>::graphmixer_layer(nn::Tape<T>& tape, nn::ParamStore<T>& store, std::size_t layer, Var M,
                                            std::span<const std::uint8_t> mask) const {
  const Shape sm = tape.shape(M);
  if (sm.size() != 3 || sm[1] != cfg_.n || sm[2] != d_msg(layer)) {
    throw DimensionError("graphmixer messages " + nn::shape_str(sm));
  }
  const std::size_t P = sm[0], n = sm[1];
  if (mask.size() != P * n) throw DimensionError("graphmixer mask size mismatch");
  Var mc = mask_col(tape, mask, P, n);
  auto p = [&](const char* s) { return tape.param(store, name(layer, s)); };
  Var X = tape.mul(tape.linear(M, p("Wp"), p("bp")), mc);
  if (cfg_.token_mixing) {
    Var u = tape.linear(tape.gelu(tape.linear(tape.transpose12(tape.layer_norm(X)), p("W1t"), p("b1t"))), p("W2t"), p("b2t"));
    X = tape.mul(tape.add(X, tape.transpose12(u)), mc);
  }
  Var c = tape.linear(tape.gelu(tape.linear(tape.layer_norm(X), p("W1c"), p("b1c"))), p("W2c"), p("b2c"));
  MixerOut out;
  out.Y = tape.mul(tape.add(X, c), mc);
  out.h = tape.mean_axis(out.Y, 1);
  return out;
}

template <typename T>
Var TemporalModel<T>::predict(nn::Tape<T>& tape, nn::ParamStore<T>& store, Var hu, Var hv) const {
  const Shape su = tape.shape(hu);
  if (su.size() != 2 || su[1] != cfg_.d || tape.shape(hv) != su) throw DimensionError("predictor inputs must be [B, d]");
  Var z = tape.relu(tape.linear(tape.concat({hu, hv}), tape.param(store, prefix_ + "pred.W1"),
                                tape.param(store, prefix_ + "pred.b1")));
  Var y = tape.linear(z, tape.param(store, prefix_ + "pred.W2"), tape.param(store, prefix_ + "pred.b2"));
  return tape.reshape(y, {su[0]});
}

template <typename T>
Forward TemporalModel<T>::embed(nn::Tape<T>& tape, nn::ParamStore<T>& store, const TemporalGraph& g,
                                std::span<const NodeId> roots, std::span<const double> times,
                                std::span<const Hop> hops) const {
  const std::size_t L = cfg_.layers, n = cfg_.n;
  if (hops.size() != L) throw DimensionError("one hop per layer required");
  if (times.size() != roots.size()) throw DimensionError("one time per root required");
  if (g.d_v() != d_v_ || g.d_e() != d_e_) throw DimensionError("graph feature widths differ from the model's");

  // Node lists and query times per depth; -1 marks padding.
  std::vector<std::vector<std::int64_t>> nodes(L + 1);
  std::vector<std::vector<double>> when(L + 1);
  nodes[0].assign(roots.begin(), roots.end());
  when[0].assign(times.begin(), times.end());
  for (std::size_t k = 0; k < L; ++k) {
    const Hop& h = hops[k];
    if (h.n != n || h.nbr.size() != nodes[k].size() * n || h.eid.size() != h.nbr.size() ||
        h.ts.size() != h.nbr.size() || h.mask.size() != h.nbr.size()) {
      throw DimensionError("hop " + std::to_string(k) + " does not match its parents");
    }
    for (std::size_t i = 0; i < h.nbr.size(); ++i) {
      if ((h.nbr[i] >= 0) != bool(h.mask[i])) throw ContractError("hop mask disagrees with padding");
      if (h.mask[i] && nodes[k][i / n] < 0) throw ContractError("a padded parent has neighbors");
    }
    nodes[k + 1] = h.nbr;
    when[k + 1] = h.ts;
  }

  // H[k][l]: layer-l embeddings of depth-k nodes.
  std::vector<std::vector<Var>> H(L + 1, std::vector<Var>(L + 1));
  for (std::size_t k = 0; k <= L; ++k) {
    const std::size_t R = nodes[k].size();
    Tensor<T> x({R, d_v_});
    for (std::size_t r = 0; r < R; ++r) {
      if (nodes[k][r] < 0 || d_v_ == 0) continue;
      const float* f = g.node_features.row(static_cast<std::size_t>(nodes[k][r]));
      for (std::size_t c = 0; c < d_v_; ++c) x[r * d_v_ + c] = static_cast<T>(f[c]);
    }
    H[k][0] = tape.constant(std::move(x));
  }

  const double a = cfg_.alpha > 0 ? cfg_.alpha : std::sqrt(double(cfg_.d_time));
  const double b = cfg_.beta > 0 ? cfg_.beta : std::sqrt(double(cfg_.d_time));
  Forward out;
  for (std::size_t l = 1; l <= L; ++l) {
    for (std::size_t k = 0; k + l <= L; ++k) {
      const Hop& hop = hops[k];
      const std::size_t P = nodes[k].size(), R = P * n;
      Tensor<T> ef({P, n, d_e_}), dt({R, 1});
      Tensor<T> fixed_te({P, n, cfg_.d_time});
      for (std::size_t i = 0; i < R; ++i) {
        if (!hop.mask[i]) continue;
        const auto e = static_cast<std::size_t>(hop.eid[i]);
        for (std::size_t c = 0; c < d_e_; ++c) ef[i * d_e_ + c] = static_cast<T>(g.edge_features.row(e)[c]);
        const double delta = when[k][i / n] - hop.ts[i];
        dt[i] = static_cast<T>(delta);
        if (cfg_.aggregator == AggregatorKind::graphmixer) {
          const auto te = time_encode(delta, cfg_.d_time, a, b);
          for (std::size_t c = 0; c < cfg_.d_time; ++c) fixed_te[i * cfg_.d_time + c] = static_cast<T>(te[c]);
        }
      }
      Var te = cfg_.aggregator == AggregatorKind::tgat
                   ? tape.reshape(tgat_time_encode(tape, store, l, tape.constant(std::move(dt))), {P, n, cfg_.d_time})
                   : tape.constant(std::move(fixed_te));
      Var child = tape.reshape(H[k + 1][l - 1], {P, n, d_in(l)});
      Var M = tape.mul(tape.concat({child, tape.constant(std::move(ef)), te}), mask_col(tape, hop.mask, P, n));
      AggRecord rec;
      rec.hop = k;
      if (cfg_.aggregator == AggregatorKind::tgat) {
        auto o = tgat_layer(tape, store, l, H[k][l - 1], M, hop.mask);
        rec.h = o.h;
        rec.tau = o.tau;
        rec.V = o.V;
      } else {
        auto o = graphmixer_layer(tape, store, l, M, hop.mask);
        rec.h = o.h;
        rec.V = o.Y;
      }
      H[k][l] = rec.h;
      out.records.push_back(rec);
    }
  }
  out.h = H[0][L];
  return out;
}

template <typename T>
Var model_loss(nn::Tape<T>& tape, Var pos, Var neg) {
  const Shape s = tape.shape(pos);
  if (s.size() != 1 || tape.shape(neg) != s) throw DimensionError("positive and negative logits must be equal-length vectors");
  if (s[0] == 0) throw DimensionError("empty batch");
  Var per = tape.add(tape.softplus(tape.scale(pos, T(-1))), tape.softplus(neg));
  return tape.scale(tape.sum(per), T(1) / static_cast<T>(s[0]));
}

template class TemporalModel<float>;
template class TemporalModel<double>;
template Var model_loss<float>(nn::Tape<float>&, Var, Var);
template Var model_loss<double>(nn::Tape<double>&, Var, Var);

}  // namespace ctdg
