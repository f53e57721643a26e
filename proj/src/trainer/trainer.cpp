#include <algorithm>
#include <chrono>
#include <cmath>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "ctdg/error.hpp"
#include "ctdg/trainer.hpp"

namespace ctdg {

using nn::Tensor;
using nn::Var;

PhaseTimes& PhaseTimes::operator+=(const PhaseTimes& o) {
  nf += o.nf;
  as += o.as;
  fs += o.fs;
  pp += o.pp;
  other += o.other;
  return *this;
}

namespace {

using Clock = std::chrono::steady_clock;

// Charges the time since the previous lap to one phase.
class Laps {
 public:
  void operator()(double& phase) {
    const auto now = Clock::now();
    phase += std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }

 private:
  Clock::time_point last_ = Clock::now();
};

// Tape tensors are large and short-lived. Keeping freed memory in the heap
// instead of returning it to the OS avoids re-faulting fresh pages on every
// iteration.
void keep_freed_memory() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
  }();
  (void)once;
#endif
}

std::vector<std::int64_t> iota_rows(std::size_t begin, std::size_t count) {
  std::vector<std::int64_t> r(count);
  for (std::size_t i = 0; i < count; ++i) r[i] = static_cast<std::int64_t>(begin + i);
  return r;
}

template <typename T>
std::vector<double> to_double(const Tensor<T>& t) {
  return std::vector<double>(t.data.begin(), t.data.end());
}

}  // namespace

template <typename T>
Trainer<T>::Trainer(const RunConfig& cfg, const TemporalGraph& g, const SplitSpec& split, std::uint64_t seed)
    : cfg_(cfg),
      g_(g),
      split_(split),
      seed_(seed),
      policy_(cfg.resolved_finder()),
      selector_(split.train, cfg.gamma),
      cache_(g.num_events(),
             CacheConfig{static_cast<std::size_t>(std::floor(cfg.cache_fraction * double(g.num_events()))),
                         cfg.epsilon, false, 0.0},
             g.edge_features.empty() ? nullptr : &g.edge_features) {
  cfg_.validate();
  if (split_.train.size() == 0) throw ConfigError("empty training split");
  keep_freed_memory();
  RngStream init(seed_, hash_tag("model-init"));
  model_ = std::make_unique<TemporalModel<T>>(cfg_.model_config(), g.d_v(), g.d_e(), model_store_, init);
  if (cfg_.adaptive_neighbor) {
    RngStream sinit(seed_, hash_tag("sampler-init"));
    sampler_ = std::make_unique<AdaptiveSampler<T>>(cfg_.sampler_config(), g.d_v(), g.d_e(), sampler_store_, sinit);
  }
  train_pool_ = destination_pool(g, split_.train);
  eval_pool_ = destination_pool(g, {0, g.num_events()});
}

template <typename T>
Trainer<T>::~Trainer() = default;

template <typename T>
std::size_t Trainer<T>::iterations_per_epoch() const {
  const std::size_t full = selector_.iterations_per_epoch(cfg_.batch);
  return cfg_.max_iterations_per_epoch ? std::min(full, cfg_.max_iterations_per_epoch) : full;
}

template <typename T>
std::vector<Neighborhood> Trainer<T>::find(const std::vector<NodeId>& nodes, const std::vector<double>& times,
                                           std::uint64_t seed) const {
  const std::size_t budget = sampler_ ? cfg_.m : cfg_.n;
  std::vector<NeighborQuery> q(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) q[i] = {nodes[i], times[i], budget};
  auto out = batch_find(g_, q, policy_, seed, cfg_.workers);
  // Every event read downstream is reached through these lists, and deeper
  // hops query at their parent's event time, so checking each list against
  // its own query time covers the whole computation.
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (double ts : out[i].ts) {
      if (!(ts < times[i])) {
        throw ContractError("temporal causality breach: event at " + std::to_string(ts) + " read for a query at " +
                            std::to_string(times[i]));
      }
    }
    causality_checks_ += out[i].size();
  }
  return out;
}

template <typename T>
IterationStats Trainer<T>::train_iteration() {
  IterationStats st;
  Laps lap;
  const std::size_t L = cfg_.layers, n = cfg_.n;

  std::vector<EventId> batch;
  if (cfg_.adaptive_minibatch) {
    RngStream rng(seed_, hash_tag("select"), iteration_);
    batch = selector_.select_batch(std::min(cfg_.batch, split_.train.size()), rng);
  } else {
    batch = selector_.chronological_batch(epoch_iteration_ % selector_.iterations_per_epoch(cfg_.batch), cfg_.batch);
  }
  const std::size_t B = batch.size();
  RngStream nrng(seed_, hash_tag("negative"), iteration_);
  const auto negs = sample_negatives(train_pool_, B, nrng);
  std::vector<NodeId> roots(3 * B);
  std::vector<double> times(3 * B);
  for (std::size_t i = 0; i < B; ++i) {
    const Event& ev = g_.events[batch[i]];
    roots[i] = ev.src;
    roots[B + i] = ev.dst;
    roots[2 * B + i] = negs[i];
    times[i] = times[B + i] = times[2 * B + i] = ev.ts;
  }
  lap(st.times.other);

  // Hops from the roots outward: finder, then the adaptive choice of n.
  nn::Tape<T> stape;
  std::vector<Hop> hops;
  std::vector<PolicyBatch> policies;
  std::vector<Selection> picks;
  std::vector<NodeId> qn = roots;
  std::vector<double> qt = times;
  for (std::size_t k = 0; k < L; ++k) {
    if (k > 0) hop_targets(hops.back(), qn, qt);
    const auto nb = find(qn, qt, hash_combine(hash_combine(seed_, hash_tag("finder")), iteration_ * L + k));
    lap(st.times.nf);
    if (sampler_) {
      auto p = sampler_->policy(stape, sampler_store_, g_, qn, qt, nb);
      RngStream rng(seed_, hash_tag("sample"), iteration_ * L + k);
      auto s = sampler_->sample(p, rng);
      hops.push_back(make_hop(nb, n, s.slots));
      policies.push_back(std::move(p));
      picks.push_back(std::move(s));
      lap(st.times.as);
    } else {
      hops.push_back(make_hop(nb, n));
      lap(st.times.nf);
    }
  }

  // Feature slicing: every edge feature the model will read goes through
  // the cache.
  std::vector<EventId> eids;
  for (const Hop& h : hops)
    for (std::size_t i = 0; i < h.eid.size(); ++i)
      if (h.mask[i]) eids.push_back(static_cast<EventId>(h.eid[i]));
  cache_.lookup(eids, &fs_buffer_);
  lap(st.times.fs);

  nn::Tape<T> tape;
  const Forward fw = model_->embed(tape, model_store_, g_, roots, times, hops);
  Var hs = tape.gather_rows(fw.h, iota_rows(0, B));
  Var hd = tape.gather_rows(fw.h, iota_rows(B, B));
  Var hn = tape.gather_rows(fw.h, iota_rows(2 * B, B));
  Var pos = model_->predict(tape, model_store_, hs, hd);
  Var neg = model_->predict(tape, model_store_, hs, hn);
  Var loss = model_loss(tape, pos, neg);
  tape.backward(loss);
  if (capture_) {
    last_grads_.clear();
    for (std::size_t i = 0; i < model_store_.size(); ++i) last_grads_.push_back(model_store_.grad(nn::ParamId(i)));
  }
  nn::adam_step(model_store_, cfg_.lr);
  st.loss = static_cast<double>(tape.value(loss).item());
  if (!std::isfinite(st.loss)) throw NumericalError("non-finite model loss at iteration " + std::to_string(iteration_));
  st.pos_logits = to_double(tape.value(pos));
  lap(st.times.pp);

  if (sampler_) {
    std::vector<Var> sel_log_q(L);
    Var total;
    for (const AggRecord& rec : fw.records) {
      const std::size_t k = rec.hop;
      if (!sel_log_q[k].valid()) sel_log_q[k] = sampler_->selected_log_q(stape, policies[k], picks[k]);
      Var gk = stape.constant(tape.grad(rec.h));
      Var part;
      if (cfg_.aggregator == AggregatorKind::tgat) {
        Tensor<T> tau = tape.value(rec.tau);
        for (std::size_t i = 0; i < tau.size(); ++i)
          if (!hops[k].mask[i]) tau[i] = T(0);
        part = sample_loss_tgat(stape, gk, stape.constant(std::move(tau)), stape.constant(tape.value(rec.V)),
                                sel_log_q[k], picks[k].scored, cfg_.tgat_loss);
      } else {
        Var mu = stape.constant(tape.value(rec.V));
        Var w = stape.constant(Tensor<T>(tape.shape(rec.V), T(1)));
        part = sample_loss_graphmixer(stape, gk, w, mu, sel_log_q[k], picks[k].scored);
      }
      total = total.valid() ? stape.add(total, part) : part;
    }
    update_sampler(stape, total, sampler_store_, cfg_.resolved_sampler_lr());
    st.sample_loss = static_cast<double>(stape.value(total).item());
    lap(st.times.as);
  }

  if (cfg_.adaptive_minibatch) selector_.update_scores(batch, st.pos_logits);
  lap(st.times.other);
  st.batch = B;
  st.eids = std::move(batch);
  ++iteration_;
  ++epoch_iteration_;
  return st;
}

template <typename T>
EpochRecord Trainer<T>::train_epoch() {
  const auto start = Clock::now();
  EpochRecord rec;
  rec.epoch = ++epoch_;
  epoch_iteration_ = 0;
  const std::size_t iters = iterations_per_epoch();
  double loss = 0.0, sloss = 0.0;
  for (std::size_t i = 0; i < iters; ++i) {
    const auto st = train_iteration();
    loss += st.loss;
    sloss += st.sample_loss;
    rec.times += st.times;
  }
  rec.iterations = iters;
  rec.train_loss = loss / double(iters);
  rec.sample_loss = sloss / double(iters);
  cache_.maybe_replace();
  rec.cache = cache_.epochs().back();
  rec.epoch_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return rec;
}

template <typename T>
MrrResult Trainer<T>::evaluate(EidRange range, std::size_t max_edges, std::uint64_t eval_seed) {
  const std::size_t L = cfg_.layers, n = cfg_.n;
  std::size_t batch_no = 0;
  LinkScorer scorer = [&](const EvalBatch& eb) {
    const std::size_t R = eb.src.size(), K = eb.k;
    std::vector<NodeId> roots(eb.src);
    roots.insert(roots.end(), eb.cand.begin(), eb.cand.end());
    std::vector<double> times(eb.t);
    for (std::size_t r = 0; r < R; ++r) times.insert(times.end(), K, eb.t[r]);
    std::vector<Hop> hops;
    std::vector<NodeId> qn = roots;
    std::vector<double> qt = times;
    for (std::size_t k = 0; k < L; ++k) {
      if (k > 0) hop_targets(hops.back(), qn, qt);
      const auto nb = find(qn, qt, hash_combine(hash_combine(eval_seed, hash_tag("eval-finder")), batch_no * L + k));
      if (sampler_) {
        nn::Tape<T> stape;
        const auto p = sampler_->policy(stape, sampler_store_, g_, qn, qt, nb);
        hops.push_back(make_hop(nb, n, sampler_->greedy(p).slots));
      } else {
        hops.push_back(make_hop(nb, n));
      }
    }
    ++batch_no;
    nn::Tape<T> tape;
    auto& store = model_store_;
    const Forward fw = model_->embed(tape, store, g_, roots, times, hops);
    std::vector<std::int64_t> src_rows(R * K);
    for (std::size_t i = 0; i < R * K; ++i) src_rows[i] = static_cast<std::int64_t>(i / K);
    Var hs = tape.gather_rows(fw.h, std::move(src_rows));
    Var hc = tape.gather_rows(fw.h, iota_rows(R, R * K));
    return to_double(tape.value(model_->predict(tape, store, hs, hc)));
  };
  EvalOptions opt{cfg_.eval_negatives, cfg_.eval_batch, max_edges, eval_seed};
  return evaluate_mrr(g_, range, scorer, opt, eval_pool_);
}

template <typename T>
void Trainer<T>::save(const std::filesystem::path& dir) const {
  nn::save_checkpoint(model_store_, dir / "model");
  if (sampler_) nn::save_checkpoint(sampler_store_, dir / "sampler");
}

template <typename T>
void Trainer<T>::load(const std::filesystem::path& dir) {
  nn::load_checkpoint(model_store_, dir / "model");
  if (sampler_) nn::load_checkpoint(sampler_store_, dir / "sampler");
}

template class Trainer<float>;
template class Trainer<double>;

}  // namespace ctdg
