#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ctdg {

using NodeId = std::uint32_t;
using EventId = std::uint32_t;

struct Event {
  NodeId src = 0;
  NodeId dst = 0;
  double ts = 0.0;
  EventId eid = 0;
  bool operator==(const Event&) const = default;
};

// Dense row-major float matrix. A width-0 store means "absent".
struct FeatureStore {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  bool empty() const noexcept { return cols == 0; }
  const float* row(std::size_t i) const { return data.data() + i * cols; }
  bool operator==(const FeatureStore&) const = default;
};

void save_features(const std::filesystem::path& path, const FeatureStore& fs);
FeatureStore load_features(const std::filesystem::path& path);

// Immutable temporal CSR graph. Every event appears in both endpoints'
// lists; each list is ordered by (ts, eid).
struct TemporalGraph {
  std::size_t num_nodes = 0;
  std::vector<Event> events;  // eid order == (ts, input row) order
  std::vector<std::size_t> offsets;  // num_nodes + 1
  std::vector<NodeId> adj_nbr;
  std::vector<double> adj_ts;
  std::vector<EventId> adj_eid;
  FeatureStore node_features;
  FeatureStore edge_features;

  std::size_t num_events() const noexcept { return events.size(); }
  std::size_t degree(NodeId v) const { return offsets[v + 1] - offsets[v]; }
  std::span<const double> ts_of(NodeId v) const {
    return {adj_ts.data() + offsets[v], degree(v)};
  }
  std::size_t d_v() const noexcept { return node_features.cols; }
  std::size_t d_e() const noexcept { return edge_features.cols; }

  bool operator==(const TemporalGraph&) const = default;
};

struct RawEvent {
  std::int64_t src = 0;
  std::int64_t dst = 0;
  double ts = 0.0;
};

// Sorts stably by ts, assigns eids, and builds the adjacency. Edge feature
// rows follow the input order of `rows`. num_nodes = 0 infers max id + 1.
TemporalGraph build_graph(const std::vector<RawEvent>& rows, std::size_t num_nodes = 0,
                          FeatureStore edge_features = {}, FeatureStore node_features = {});

struct IngestConfig {
  // -1 infers the edge-feature width from the first row.
  long edge_feature_dim = -1;
  std::size_t num_nodes = 0;
  std::optional<std::filesystem::path> node_features;
};

// Text events: one `src,dst,ts[,f1,...]` per line. A non-numeric first
// line is treated as a header; blank lines and '#' comments are skipped.
TemporalGraph ingest_events(const std::filesystem::path& path, const IngestConfig& cfg = {});

// Dataset manifest (JSON): {"events": file, "node_features": file|null,
// "num_nodes": n, "d_v": .., "d_e": ..}. Paths are relative to the manifest.
TemporalGraph load_dataset(const std::filesystem::path& manifest);
void save_dataset(const TemporalGraph& g, const std::filesystem::path& dir);

struct EidRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  bool operator==(const EidRange&) const = default;
};

struct SplitSpec {
  EidRange train;
  EidRange val;
  EidRange test;
};

SplitSpec chronological_split(const TemporalGraph& g, std::array<double, 3> ratios = {0.6, 0.2, 0.2},
                              std::optional<std::size_t> window = std::nullopt);

// Number of adjacency entries of v with ts strictly below t.
std::size_t temporal_neighborhood_size(const TemporalGraph& g, NodeId v, double t);

// Exhaustive structural checks; throws ValidationError on the first breach.
void validate_graph(const TemporalGraph& g);

}  // namespace ctdg
