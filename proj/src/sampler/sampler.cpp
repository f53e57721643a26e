#include "ctdg/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ctdg/error.hpp"

namespace ctdg {

using nn::Shape;
using nn::Tensor;
using nn::Var;

DecoderKind parse_decoder(std::string_view name) {
  if (name == "linear") return DecoderKind::linear;
  if (name == "gat") return DecoderKind::gat;
  if (name == "gatv2") return DecoderKind::gatv2;
  if (name == "trans") return DecoderKind::trans;
  throw ConfigError("unknown decoder '" + std::string(name) + "' (linear, gat, gatv2, trans)");
}

std::string_view decoder_name(DecoderKind k) {
  switch (k) {
    case DecoderKind::linear: return "linear";
    case DecoderKind::gat: return "gat";
    case DecoderKind::gatv2: return "gatv2";
    case DecoderKind::trans: return "trans";
  }
  return "?";
}

void SamplerConfig::validate() const {
  enc.validate();
  if (n == 0) throw ConfigError("sample size n must be >= 1");
  if (n > enc.m) throw ConfigError("sample size n must not exceed the scope budget m");
  if (d_att == 0) throw ConfigError("attention width must be >= 1");
}

std::size_t Selection::count(std::size_t row) const {
  std::size_t c = 0;
  for (std::size_t j = 0; j < n; ++j) c += slots[row * n + j] >= 0;
  return c;
}

std::vector<std::int32_t> sample_without_replacement(std::span<const double> q, std::size_t n, RngStream& rng) {
  std::vector<double> w(q.begin(), q.end());
  std::vector<std::int32_t> out;
  out.reserve(n);
  while (out.size() < n) {
    double total = 0.0;
    for (double v : w) total += v;
    if (!(total > 0.0)) break;
    const double u = rng.uniform() * total;
    double acc = 0.0;
    std::size_t pick = w.size();
    std::size_t last_pos = w.size();
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (w[j] <= 0.0) continue;
      last_pos = j;
      acc += w[j];
      if (u < acc) {
        pick = j;
        break;
      }
    }
    if (pick == w.size()) pick = last_pos;  // rounding at the top end
    out.push_back(static_cast<std::int32_t>(pick));
    w[pick] = 0.0;
  }
  return out;
}

template <typename T>
AdaptiveSampler<T>::AdaptiveSampler(const SamplerConfig& cfg, std::size_t d_v, std::size_t d_e,
                                    nn::ParamStore<T>& store, RngStream& init, const std::string& prefix)
    : cfg_(cfg), enc_(cfg.enc, d_v, d_e, store, init, prefix + "enc."), prefix_(prefix) {
  cfg_.validate();
  const std::size_t D = enc_.d_enc(), m = cfg_.enc.m, a = cfg_.d_att, dt = enc_.d_target();
  store.add(name("W1c"), nn::xavier_uniform<T>({D, D}, init));
  store.add(name("b1c"), nn::zeros<T>({D}));
  store.add(name("W2c"), nn::xavier_uniform<T>({D, D}, init));
  store.add(name("b2c"), nn::zeros<T>({D}));
  store.add(name("W1t"), nn::xavier_uniform<T>({m, m}, init));
  store.add(name("b1t"), nn::zeros<T>({m}));
  store.add(name("W2t"), nn::xavier_uniform<T>({m, m}, init));
  store.add(name("b2t"), nn::zeros<T>({m}));
  switch (cfg_.decoder) {
    case DecoderKind::linear:
      store.add(name("w_l"), nn::xavier_uniform<T>({1, D}, init));
      break;
    case DecoderKind::gat:
      store.add(name("W_g"), nn::xavier_uniform<T>({a, D}, init));
      store.add(name("a_g"), nn::xavier_uniform<T>({1, 2 * a}, init));
      break;
    case DecoderKind::gatv2:
      store.add(name("W_g2"), nn::xavier_uniform<T>({a, D + dt}, init));
      store.add(name("a_g2"), nn::xavier_uniform<T>({1, a}, init));
      break;
    case DecoderKind::trans:
      store.add(name("W_t"), nn::xavier_uniform<T>({a, dt}, init));
      store.add(name("W_tp"), nn::xavier_uniform<T>({a, D}, init));
      break;
  }
}

namespace {

template <typename T>
Var mask_column(nn::Tape<T>& tape, std::span<const std::uint8_t> mask, std::size_t B, std::size_t m) {
  Tensor<T> mc({B, m, 1});
  for (std::size_t i = 0; i < B * m; ++i) mc[i] = mask[i] ? T(1) : T(0);
  return tape.constant(std::move(mc));
}

}  // namespace

template <typename T>
Var AdaptiveSampler<T>::mixer_transform(nn::Tape<T>& tape, nn::ParamStore<T>& store, Var z,
                                        std::span<const std::uint8_t> mask) const {
  const Shape s = tape.shape(z);
  const std::size_t m = cfg_.enc.m, D = enc_.d_enc();
  if (s.size() != 3 || s[1] != m || s[2] != D) {
    throw DimensionError("mixer input " + nn::shape_str(s) + " vs [B, " + std::to_string(m) + ", " +
                         std::to_string(D) + "]");
  }
  const std::size_t B = s[0];
  if (mask.size() != B * m) throw DimensionError("mixer mask size mismatch");
  Var mc = mask_column(tape, mask, B, m);
  Var h = tape.linear(tape.gelu(tape.linear(tape.layer_norm(z), tape.param(store, name("W1c")),
                                            tape.param(store, name("b1c")))),
                      tape.param(store, name("W2c")), tape.param(store, name("b2c")));
  Var x = tape.mul(tape.add(z, h), mc);
  Var xt = tape.transpose12(tape.layer_norm(x));  // [B, D, m]
  Var u = tape.linear(tape.gelu(tape.linear(xt, tape.param(store, name("W1t")), tape.param(store, name("b1t")))),
                      tape.param(store, name("W2t")), tape.param(store, name("b2t")));
  return tape.mul(tape.add(x, tape.transpose12(u)), mc);
}

template <typename T>
PolicyBatch AdaptiveSampler<T>::decode_policy(nn::Tape<T>& tape, nn::ParamStore<T>& store, Var Z, Var z_raw,
                                              Var z_v, std::span<const std::uint8_t> mask,
                                              std::span<const std::size_t> valid) const {
  const std::size_t m = cfg_.enc.m;
  const std::size_t B = tape.shape(Z)[0];
  if (valid.size() != B || mask.size() != B * m) throw DimensionError("policy mask/valid size mismatch");
  const Shape ts = tape.shape(z_v);
  if (ts.size() != 2 || ts[0] != B || ts[1] != enc_.d_target()) {
    throw DimensionError("target embedding " + nn::shape_str(ts));
  }
  const Var src = cfg_.attention_on_mixer ? Z : z_raw;
  Var logits;
  switch (cfg_.decoder) {
    case DecoderKind::linear:
      logits = tape.linear(Z, tape.param(store, name("w_l")));
      break;
    case DecoderKind::gat: {
      // Lift the target into the neighbor layout: [h_v | 0 | TE | FE | 0].
      const std::size_t pv = enc_.proj_v(), pe = enc_.proj_e(), fixed = enc_.d_target() - pv;
      Var lifted = tape.concat({tape.slice_last(z_v, 0, pv), tape.constant(Tensor<T>({B, pe})),
                                tape.slice_last(z_v, pv, fixed), tape.constant(Tensor<T>({B, m}))});
      Var W = tape.param(store, name("W_g"));
      Var hs = tape.linear(src, W);
      Var ht = tape.repeat_middle(tape.linear(lifted, W), m);
      logits = tape.leaky_relu(tape.linear(tape.concat({ht, hs}), tape.param(store, name("a_g"))));
      break;
    }
    case DecoderKind::gatv2: {
      Var cat = tape.concat({src, tape.repeat_middle(z_v, m)});
      logits = tape.linear(tape.leaky_relu(tape.linear(cat, tape.param(store, name("W_g2")))),
                           tape.param(store, name("a_g2")));
      break;
    }
    case DecoderKind::trans: {
      const std::size_t a = cfg_.d_att;
      Var qv = tape.reshape(tape.linear(z_v, tape.param(store, name("W_t"))), {B, a, 1});
      Var k = tape.linear(Z, tape.param(store, name("W_tp")));
      Tensor<T> inv({B, 1, 1});
      for (std::size_t r = 0; r < B; ++r) inv[r] = T(1) / static_cast<T>(std::sqrt(double(std::max<std::size_t>(valid[r], 1))));
      logits = tape.mul(tape.bmm(k, qv), tape.constant(std::move(inv)));
      break;
    }
  }
  logits = tape.reshape(logits, {B, m});
  PolicyBatch p;
  p.B = B;
  p.m = m;
  p.mask.assign(mask.begin(), mask.end());
  p.valid.assign(valid.begin(), valid.end());
  p.log_q = tape.log_softmax(logits, mask);
  const auto& lq = tape.value(p.log_q);
  p.q.assign(B * m, 0.0);
  p.log_q_export.assign(B * m, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < B * m; ++i) {
    if (!mask[i]) continue;
    p.log_q_export[i] = static_cast<double>(lq[i]);
    p.q[i] = std::exp(p.log_q_export[i]);
  }
  return p;
}

template <typename T>
PolicyBatch AdaptiveSampler<T>::policy(nn::Tape<T>& tape, nn::ParamStore<T>& store, const TemporalGraph& g,
                                       std::span<const NodeId> targets, std::span<const double> times,
                                       std::span<const Neighborhood> nbhds) const {
  if (targets.size() != nbhds.size()) throw DimensionError("one target per neighborhood required");
  auto emb = enc_.build_neighbor_embedding(tape, store, g, times, nbhds);
  Var Z = mixer_transform(tape, store, emb.z, emb.mask);
  Var zv = enc_.build_target_embedding(tape, store, g, targets);
  return decode_policy(tape, store, Z, emb.z, zv, emb.mask, emb.valid);
}

namespace {

Selection empty_selection(std::size_t B, std::size_t n) {
  Selection s;
  s.n = n;
  s.slots.assign(B * n, -1);
  s.scored.assign(B, 0);
  return s;
}

void fill_all(const PolicyBatch& p, std::size_t r, Selection& s) {
  std::size_t k = 0;
  for (std::size_t j = 0; j < p.m && k < s.n; ++j)
    if (p.mask[r * p.m + j]) s.slots[r * s.n + k++] = static_cast<std::int32_t>(j);
}

}  // namespace

template <typename T>
Selection AdaptiveSampler<T>::sample(const PolicyBatch& p, RngStream& rng) const {
  const std::size_t n = cfg_.n;
  Selection s = empty_selection(p.B, n);
  for (std::size_t r = 0; r < p.B; ++r) {
    if (p.valid[r] <= n) {
      fill_all(p, r, s);
      continue;
    }
    auto pick = sample_without_replacement(std::span<const double>(p.q).subspan(r * p.m, p.m), n, rng);
    std::sort(pick.begin(), pick.end());
    std::copy(pick.begin(), pick.end(), s.slots.begin() + static_cast<std::ptrdiff_t>(r * n));
    s.scored[r] = 1;
  }
  return s;
}

template <typename T>
Selection AdaptiveSampler<T>::greedy(const PolicyBatch& p) const {
  const std::size_t n = cfg_.n;
  Selection s = empty_selection(p.B, n);
  std::vector<std::int32_t> order(p.m);
  for (std::size_t r = 0; r < p.B; ++r) {
    if (p.valid[r] <= n) {
      fill_all(p, r, s);
      continue;
    }
    const double* q = p.q.data() + r * p.m;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) { return q[a] > q[b]; });
    std::vector<std::int32_t> top(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(top.begin(), top.end());
    std::copy(top.begin(), top.end(), s.slots.begin() + static_cast<std::ptrdiff_t>(r * n));
    s.scored[r] = 1;
  }
  return s;
}

template <typename T>
Selection AdaptiveSampler<T>::take_all(const PolicyBatch& p) const {
  Selection s = empty_selection(p.B, cfg_.n);
  for (std::size_t r = 0; r < p.B; ++r) {
    if (p.valid[r] > cfg_.n) throw ContractError("take_all on a row with more than n valid slots");
    fill_all(p, r, s);
  }
  return s;
}

template <typename T>
Var AdaptiveSampler<T>::selected_log_q(nn::Tape<T>& tape, const PolicyBatch& p, const Selection& s) const {
  const std::size_t n = s.n;
  std::vector<std::int64_t> idx(p.B * n);
  Tensor<T> keep({p.B, n});
  for (std::size_t i = 0; i < p.B * n; ++i) {
    idx[i] = std::max<std::int32_t>(s.slots[i], 0);
    keep[i] = s.slots[i] >= 0 ? T(1) : T(0);
  }
  return tape.mul(tape.gather_last(p.log_q, std::move(idx), n), tape.constant(std::move(keep)));
}

namespace {

template <typename T>
Var row_weights(nn::Tape<T>& tape, std::span<const std::uint8_t> w, std::size_t B) {
  if (w.size() != B) throw DimensionError("row weight count mismatch");
  Tensor<T> t({B, 1});
  for (std::size_t r = 0; r < B; ++r) t[r] = w[r] ? T(1) : T(0);
  return tape.constant(std::move(t));
}

}  // namespace

template <typename T>
Var sample_loss_tgat(nn::Tape<T>& tape, Var g, Var tau, Var V, Var sel_log_q, std::span<const std::uint8_t> row_weight,
                     TgatLossForm form) {
  const Shape sv = tape.shape(V);
  if (sv.size() != 3) throw DimensionError("V must be [B, n, d]");
  const std::size_t B = sv[0], n = sv[1], d = sv[2];
  if (tape.shape(g) != Shape{B, d} || tape.shape(tau) != Shape{B, n} || tape.shape(sel_log_q) != Shape{B, n}) {
    throw DimensionError("sample loss operand shapes disagree");
  }
  if (row_weight.size() != B) throw DimensionError("row weight count mismatch");
  g = tape.detach(g);
  tau = tape.detach(tau);
  V = tape.detach(V);
  // Skipped rows get lambda + 1 so an empty row (lambda = 0) cannot turn
  // its zero weight into NaN.
  Tensor<T> skip({B, 1});
  for (std::size_t r = 0; r < B; ++r) skip[r] = row_weight[r] ? T(0) : T(1);
  Var lam = tape.add(tape.reshape(tape.sum_axis(tau, 1), {B, 1}), tape.constant(std::move(skip)));
  Var inv = tape.reciprocal(lam);
  Var mu = tape.sum_axis(tape.mul(tape.reshape(tau, {B, n, 1}), V), 1);  // [B, d]
  Var g3 = tape.reshape(g, {B, 1, d});
  Var c;
  if (form == TgatLossForm::chain) {
    Var h = tape.reshape(tape.mul(mu, inv), {B, 1, d});
    Var gv = tape.sum_axis(tape.mul(tape.sub(V, h), g3), 2);  // [B, n]
    c = tape.mul(tape.mul(tau, inv), gv);
  } else {
    Var inv3 = tape.mul(tape.mul(inv, inv), inv);
    Var inv4 = tape.mul(inv3, inv);
    Var gv = tape.sum_axis(tape.mul(V, g3), 2);                            // [B, n]
    Var gmu = tape.reshape(tape.sum_axis(tape.mul(g, mu), 1), {B, 1});     // [B, 1]
    c = tape.scale(tape.add(tape.mul(tape.mul(tau, gv), inv3), tape.mul(tape.mul(tau, gmu), inv4)),
                   T(1) / static_cast<T>(n));
  }
  c = tape.mul(c, row_weights(tape, row_weight, B));
  return tape.sum(tape.mul(c, sel_log_q));
}

template <typename T>
Var sample_loss_graphmixer(nn::Tape<T>& tape, Var g, Var w_prime, Var mu, Var sel_log_q,
                           std::span<const std::uint8_t> row_weight) {
  const Shape sm = tape.shape(mu);
  if (sm.size() != 3) throw DimensionError("mu must be [B, n, d]");
  const std::size_t B = sm[0], n = sm[1], d = sm[2];
  if (tape.shape(g) != Shape{B, d} || tape.shape(w_prime) != sm || tape.shape(sel_log_q) != Shape{B, n}) {
    throw DimensionError("sample loss operand shapes disagree");
  }
  g = tape.detach(g);
  w_prime = tape.detach(w_prime);
  mu = tape.detach(mu);
  Var c = tape.scale(tape.sum_axis(tape.mul(tape.mul(w_prime, mu), tape.reshape(g, {B, 1, d})), 2),
                     T(1) / static_cast<T>(n));
  c = tape.mul(c, row_weights(tape, row_weight, B));
  return tape.sum(tape.mul(c, sel_log_q));
}

template <typename T>
void update_sampler(nn::Tape<T>& tape, Var loss, nn::ParamStore<T>& store, double lr) {
  tape.backward(loss);
  nn::adam_step(store, lr);
}

#define CTDG_INSTANTIATE(T)                                                                                  \
  template class AdaptiveSampler<T>;                                                                         \
  template Var sample_loss_tgat<T>(nn::Tape<T>&, Var, Var, Var, Var, std::span<const std::uint8_t>,          \
                                   TgatLossForm);                                                            \
  template Var sample_loss_graphmixer<T>(nn::Tape<T>&, Var, Var, Var, Var, std::span<const std::uint8_t>);   \
  template void update_sampler<T>(nn::Tape<T>&, Var, nn::ParamStore<T>&, double);
CTDG_INSTANTIATE(float)
CTDG_INSTANTIATE(double)
#undef CTDG_INSTANTIATE

}  // namespace ctdg
