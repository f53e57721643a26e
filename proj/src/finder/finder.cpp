#include "ctdg/finder.hpp"

#include <algorithm>
#include <numeric>
#include <thread>
#include <unordered_set>

#include "ctdg/error.hpp"

namespace ctdg {

std::size_t pivot(const TemporalGraph& g, NodeId v, double t) {
  if (v >= g.num_nodes) throw IndexError("node " + std::to_string(v) + " out of range");
  const auto ts = g.ts_of(v);
  return static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), t) - ts.begin());
}

namespace {

void emit(const TemporalGraph& g, std::size_t base, const std::size_t* idx, std::size_t count, Neighborhood& out) {
  out.nbr.resize(count);
  out.ts.resize(count);
  out.eid.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = base + idx[i];
    out.nbr[i] = g.adj_nbr[at];
    out.ts[i] = g.adj_ts[at];
    out.eid[i] = g.adj_eid[at];
  }
}

// m distinct indices from [0, p), uniform over m-subsets, sorted descending.
void sample_indices(std::size_t p, std::size_t m, RngStream& rng, std::vector<std::size_t>& out) {
  out.clear();
  if (p <= m) {
    for (std::size_t i = p; i-- > 0;) out.push_back(i);
    return;
  }
  if (2 * m <= p) {
    // rejection: expected draws stay below 2m
    if (m <= 64) {
      while (out.size() < m) {
        const std::size_t r = rng.below(p);
        if (std::find(out.begin(), out.end(), r) == out.end()) out.push_back(r);
      }
    } else {
      std::unordered_set<std::size_t> seen;
      seen.reserve(2 * m);
      while (out.size() < m) {
        const std::size_t r = rng.below(p);
        if (seen.insert(r).second) out.push_back(r);
      }
    }
  } else {
    // budget close to the window: partial Fisher-Yates, p < 2m so O(m)
    std::vector<std::size_t> pool(p);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = i + rng.below(p - i);
      std::swap(pool[i], pool[j]);
    }
    out.assign(pool.begin(), pool.begin() + m);
  }
  std::sort(out.begin(), out.end(), std::greater<>());
}

}  // namespace

Neighborhood find_recent(const TemporalGraph& g, const NeighborQuery& q) {
  const std::size_t p = pivot(g, q.v, q.t);
  const std::size_t k = std::min(q.m, p);
  Neighborhood out;
  out.nbr.resize(k);
  out.ts.resize(k);
  out.eid.resize(k);
  const std::size_t base = g.offsets[q.v];
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t at = base + p - 1 - i;
    out.nbr[i] = g.adj_nbr[at];
    out.ts[i] = g.adj_ts[at];
    out.eid[i] = g.adj_eid[at];
  }
  return out;
}

Neighborhood find_uniform(const TemporalGraph& g, const NeighborQuery& q, RngStream& rng) {
  thread_local std::vector<std::size_t> idx;
  const std::size_t p = pivot(g, q.v, q.t);
  sample_indices(p, q.m, rng, idx);
  Neighborhood out;
  emit(g, g.offsets[q.v], idx.data(), idx.size(), out);
  return out;
}

std::vector<Neighborhood> batch_find(const TemporalGraph& g, const std::vector<NeighborQuery>& queries,
                                     FinderPolicy policy, std::uint64_t seed, std::size_t workers) {
  std::vector<Neighborhood> out(queries.size());
  auto run = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      if (policy == FinderPolicy::recent) {
        out[i] = find_recent(g, queries[i]);
      } else {
        RngStream rng(seed, i);
        out[i] = find_uniform(g, queries[i], rng);
      }
    }
  };
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(queries.size(), 1));
  if (workers <= 1) {
    run(0, queries.size());
    return out;
  }
  // Blocks of contiguous queries; each worker owns disjoint output slots.
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (queries.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk, hi = std::min(queries.size(), lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back(run, lo, hi);
  }
  for (auto& t : pool) t.join();
  return out;
}

Neighborhood find_naive(const TemporalGraph& g, const NeighborQuery& q, FinderPolicy policy, RngStream& rng) {
  if (q.v >= g.num_nodes) throw IndexError("node " + std::to_string(q.v) + " out of range");
  std::vector<NodeId> nbr;
  std::vector<double> ts;
  std::vector<EventId> eid;
  for (std::size_t at = g.offsets[q.v]; at < g.offsets[q.v + 1]; ++at) {
    if (g.adj_ts[at] < q.t) {
      nbr.push_back(g.adj_nbr[at]);
      ts.push_back(g.adj_ts[at]);
      eid.push_back(g.adj_eid[at]);
    }
  }
  const std::size_t p = eid.size();
  std::vector<std::size_t> idx;
  if (policy == FinderPolicy::recent) {
    for (std::size_t i = 0; i < std::min(q.m, p); ++i) idx.push_back(p - 1 - i);
  } else {
    sample_indices(p, q.m, rng, idx);
  }
  Neighborhood out;
  for (std::size_t i : idx) {
    out.nbr.push_back(nbr[i]);
    out.ts.push_back(ts[i]);
    out.eid.push_back(eid[i]);
  }
  return out;
}

}  // namespace ctdg
