#include "ctdg/bench.hpp"

#include <algorithm>
#include <chrono>

#include "ctdg/error.hpp"
#include "ctdg/rng.hpp"

namespace ctdg {

TemporalGraph random_event_graph(std::size_t nodes, std::size_t events, std::uint64_t seed) {
  if (nodes < 2) throw ConfigError("random graph needs >= 2 nodes");
  RngStream rng(seed, hash_tag("random-graph"));
  std::vector<RawEvent> rows(events);
  for (std::size_t i = 0; i < events; ++i) {
    rows[i].src = static_cast<std::int64_t>(rng.below(nodes));
    rows[i].dst = static_cast<std::int64_t>(rng.below(nodes));
    rows[i].ts = static_cast<double>(i);
  }
  return build_graph(rows, nodes);
}

double FinderBenchResult::parallel_speedup() const {
  return seconds.size() >= 2 && seconds.back() > 0 ? seconds.front() / seconds.back() : 0.0;
}

double FinderBenchResult::naive_speedup() const {
  return !seconds.empty() && seconds.front() > 0 ? naive_seconds / seconds.front() : 0.0;
}

nlohmann::json FinderBenchResult::to_json() const {
  nlohmann::json j;
  j["workers"] = workers;
  j["seconds"] = seconds;
  j["naive_seconds"] = naive_seconds;
  j["parallel_speedup"] = parallel_speedup();
  j["naive_speedup"] = naive_speedup();
  j["entries"] = entries;
  return j;
}

namespace {

template <typename F>
double best_of(std::size_t repeats, F&& f) {
  double best = 1e300;
  for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

}  // namespace

FinderBenchResult bench_finder(const FinderBenchConfig& cfg) {
  return bench_finder(random_event_graph(cfg.nodes, cfg.events, cfg.seed), cfg);
}

FinderBenchResult bench_finder(const TemporalGraph& g, const FinderBenchConfig& cfg) {
  if (cfg.workers.empty()) throw ConfigError("at least one worker count is required");
  RngStream rng(cfg.seed, hash_tag("bench-queries"));
  std::vector<NeighborQuery> queries(cfg.queries);
  const double horizon = g.events.empty() ? 0.0 : g.events.back().ts + 1.0;
  for (auto& q : queries) q = {static_cast<NodeId>(rng.below(g.num_nodes)), rng.uniform() * horizon, cfg.m};
  FinderBenchResult res;
  res.workers = cfg.workers;
  std::size_t sink = 0;
  for (std::size_t w : cfg.workers) {
    res.seconds.push_back(best_of(cfg.repeats, [&] {
      for (const auto& nb : batch_find(g, queries, cfg.policy, cfg.seed, w)) sink += nb.size();
    }));
  }
  res.naive_seconds = best_of(cfg.repeats, [&] {
    for (std::size_t i = 0; i < queries.size(); ++i) {
      RngStream r(cfg.seed, i);
      sink += find_naive(g, queries[i], cfg.policy, r).size();
    }
  });
  res.entries = sink;
  return res;
}

AccessTrace zipf_trace(std::size_t num_edges, std::size_t per_epoch, std::size_t epochs, double s,
                       std::uint64_t seed) {
  if (epochs == 0) throw ConfigError("trace needs >= 1 epoch");
  const ZipfSampler zipf(num_edges, s, seed);
  AccessTrace trace(epochs);
  for (std::size_t e = 0; e < epochs; ++e) {
    RngStream rng(seed, hash_tag("trace"), e);
    trace[e].resize(per_epoch);
    for (auto& x : trace[e]) x = zipf(rng);
  }
  return trace;
}

nlohmann::json bench_cache(const CacheBenchConfig& cfg) {
  const auto trace = zipf_trace(cfg.edges, cfg.accesses, cfg.epochs, cfg.skew, cfg.seed);
  CacheConfig cc;
  cc.k = static_cast<std::size_t>(cfg.k_fraction * double(cfg.edges));
  cc.epsilon = cfg.epsilon;
  cc.cumulative = cfg.cumulative;
  const auto cache = simulate_cache(trace, cfg.edges, cc);
  const auto oracle = oracle_cache(trace, cfg.edges, cc.k);
  auto j = cache_report(cache, oracle, cc, cc.k);
  double gap = 0.0;
  std::size_t count = 0;
  for (std::size_t e = 1; e < cache.size(); ++e, ++count) gap += oracle[e].hit_rate() - cache[e].hit_rate();
  j["mean_gap_from_epoch_2"] = count ? gap / double(count) : 0.0;
  return j;
}

}  // namespace ctdg
