#pragma once

#include <cstdint>
#include <mutex>
#include <span>
#include <vector>

#include <json.hpp>

#include "ctdg/graph.hpp"
#include "ctdg/rng.hpp"

namespace ctdg {

struct CacheConfig {
  std::size_t k = 0;
  // Replace when fewer than epsilon of the new top-k are resident;
  // negative selects ceil(0.9 k).
  std::int64_t epsilon = -1;
  // Keep counters across epochs instead of resetting them.
  bool cumulative = false;
  // Simulated slow-tier cost per feature element, reported only.
  double slow_ns_per_element = 0.0;
  std::size_t resolved_epsilon() const;
};

struct CacheEpoch {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  bool replaced = false;
  double slow_ns = 0.0;
  std::uint64_t requests() const noexcept { return hits + misses; }
  // 0 when there were no requests (see zero_requests()).
  double hit_rate() const noexcept { return requests() ? double(hits) / double(requests()) : 0.0; }
  bool zero_requests() const noexcept { return requests() == 0; }
};

// Fast tier of at most k edges over a slow tier holding every edge feature.
// lookup() may run concurrently; maybe_replace() must run alone.
class FeatureCache {
 public:
  FeatureCache(std::size_t num_edges, const CacheConfig& cfg, const FeatureStore* features = nullptr);

  std::size_t num_edges() const noexcept { return counters_.size(); }
  std::size_t k() const noexcept { return cfg_.k; }
  std::size_t epsilon() const noexcept { return epsilon_; }
  const CacheConfig& config() const noexcept { return cfg_; }

  // Hit flag per requested eid; copies feature rows into out when given.
  std::vector<std::uint8_t> lookup(std::span<const EventId> eids, std::vector<float>* out = nullptr);

  // Epoch boundary: closes the current epoch's stats, swaps in the top-k
  // when the overlap is below epsilon, then resets the counters.
  bool maybe_replace();

  // k highest counters (ties to the lower eid), among touched edges only.
  std::vector<EventId> top_k() const;
  std::uint32_t counter(EventId e) const;
  bool resident(EventId e) const;
  std::vector<EventId> resident_set() const;
  const CacheEpoch& current() const noexcept { return current_; }
  const std::vector<CacheEpoch>& epochs() const noexcept { return closed_; }

 private:
  CacheConfig cfg_;
  std::size_t epsilon_;
  const FeatureStore* features_;
  std::vector<std::uint32_t> counters_;
  std::vector<std::uint8_t> resident_;
  std::vector<EventId> resident_list_;
  std::vector<EventId> touched_;
  std::mutex touched_mu_;
  CacheEpoch current_;
  std::vector<CacheEpoch> closed_;
};

// One entry per epoch: the eids accessed, in order.
using AccessTrace = std::vector<std::vector<EventId>>;

// Per-epoch hit rate of caching each epoch's own top-k in advance.
std::vector<CacheEpoch> oracle_cache(const AccessTrace& trace, std::size_t num_edges, std::size_t k);
// Runs the replacement cache over the trace, one maybe_replace per epoch.
std::vector<CacheEpoch> simulate_cache(const AccessTrace& trace, std::size_t num_edges, const CacheConfig& cfg);

nlohmann::json cache_report(const std::vector<CacheEpoch>& cache, const std::vector<CacheEpoch>& oracle,
                            const CacheConfig& cfg, std::size_t resident_size);

// Zipf(s) draws over num_edges ids; rank r maps to a fixed random eid.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t num_edges, double s, std::uint64_t seed);
  EventId operator()(RngStream& rng) const;

 private:
  std::vector<double> cdf_;
  std::vector<EventId> rank_to_eid_;
};

}  // namespace ctdg
