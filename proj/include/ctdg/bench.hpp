#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "ctdg/cache.hpp"
#include "ctdg/finder.hpp"
#include "ctdg/graph.hpp"

namespace ctdg {

// Uniformly random endpoints with timestamps 0..events-1.
TemporalGraph random_event_graph(std::size_t nodes, std::size_t events, std::uint64_t seed);

struct FinderBenchConfig {
  std::size_t nodes = 2000;
  std::size_t events = 1000000;
  std::size_t queries = 10000;
  std::size_t m = 10;
  FinderPolicy policy = FinderPolicy::uniform;
  std::vector<std::size_t> workers{1, 8};
  // Each timing is the best of this many runs.
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
};

struct FinderBenchResult {
  std::vector<std::size_t> workers;
  std::vector<double> seconds;  // per worker count
  double naive_seconds = 0.0;
  // Entries returned over every timed run, so the work cannot be elided.
  std::size_t entries = 0;
  // seconds at the first worker count over seconds at the last one.
  double parallel_speedup() const;
  // naive over the single-worker batch_find time.
  double naive_speedup() const;
  nlohmann::json to_json() const;
};

FinderBenchResult bench_finder(const FinderBenchConfig& cfg);
// Same as above on a prebuilt graph.
FinderBenchResult bench_finder(const TemporalGraph& g, const FinderBenchConfig& cfg);

// `epochs` epochs of `per_epoch` Zipf(s) accesses each, with the same
// rank-to-edge map throughout (a stationary trace).
AccessTrace zipf_trace(std::size_t num_edges, std::size_t per_epoch, std::size_t epochs, double s,
                       std::uint64_t seed);

struct CacheBenchConfig {
  std::size_t edges = 100000;
  std::size_t accesses = 1000000;  // per epoch
  std::size_t epochs = 10;
  double skew = 1.1;
  double k_fraction = 0.1;
  std::int64_t epsilon = -1;
  bool cumulative = false;
  std::uint64_t seed = 0;
};

// Cache vs oracle report over a Zipf trace, with "mean_gap_from_epoch_2".
nlohmann::json bench_cache(const CacheBenchConfig& cfg);

}  // namespace ctdg
