#pragma once

#include <cstdint>
#include <vector>

#include "ctdg/graph.hpp"
#include "ctdg/rng.hpp"

namespace ctdg {

struct NeighborQuery {
  NodeId v = 0;
  double t = 0.0;
  std::size_t m = 1;
};

// Entries are ts-descending (most recent first); ties fall back to
// descending eid.
struct Neighborhood {
  std::vector<NodeId> nbr;
  std::vector<double> ts;
  std::vector<EventId> eid;

  std::size_t size() const noexcept { return eid.size(); }
  bool operator==(const Neighborhood&) const = default;
};

enum class FinderPolicy { recent, uniform };

// Index of the first adjacency entry of v with ts >= t, relative to v's list.
std::size_t pivot(const TemporalGraph& g, NodeId v, double t);

Neighborhood find_recent(const TemporalGraph& g, const NeighborQuery& q);
// Every m-subset of the valid window [0, p) is equally likely.
Neighborhood find_uniform(const TemporalGraph& g, const NeighborQuery& q, RngStream& rng);

// Query i draws from RngStream(seed, i), so results do not depend on the
// worker count or schedule. workers = 0 uses the hardware concurrency.
std::vector<Neighborhood> batch_find(const TemporalGraph& g, const std::vector<NeighborQuery>& queries,
                                     FinderPolicy policy, std::uint64_t seed, std::size_t workers = 1);

// Baseline without the pivot search: scans the whole adjacency of v, copies
// every valid entry, then selects from the copy.
Neighborhood find_naive(const TemporalGraph& g, const NeighborQuery& q, FinderPolicy policy, RngStream& rng);

}  // namespace ctdg
