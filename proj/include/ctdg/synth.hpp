#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ctdg/graph.hpp"

namespace ctdg {

// Knobs of the synthetic noisy event stream. Every source picks partners in
// its current community, preferring recent relevant partners; the noise
// knobs add links that do not follow that rule.
struct SynthConfig {
  std::size_t nodes = 5000;
  std::size_t events = 100000;
  std::size_t communities = 20;
  std::size_t d_v = 16;
  std::size_t d_e = 4;
  // Zipf exponent of per-node activity; 0 gives uniform activity.
  double skew = 1.2;
  // Per-event chance that the source moves to another community, which
  // turns its earlier links into deprecated ones.
  double relocation = 0.02;
  // Per-event chance of a link to a uniformly random node.
  double cross = 0.1;
  // Per-event chance of a link to the currently bursting spam hub.
  double spam = 0.1;
  std::size_t hubs = 10;
  std::size_t burst_length = 2000;
  // Chance that a regular link repeats one of the source's recent
  // same-community partners.
  double repeat = 0.5;
  std::size_t recent_window = 10;
  double feature_noise = 0.5;
  std::uint64_t seed = 0;
  void validate() const;
};

enum class LinkKind : std::uint8_t { relevant = 0, cross = 1, spam = 2 };

struct SynthDataset {
  TemporalGraph graph;
  std::vector<LinkKind> kind;             // per eid
  std::vector<std::uint32_t> community;   // per node, at the end of the stream
  std::vector<std::uint32_t> original;    // per node, at the start
  std::vector<double> relocation_times;   // sorted
  std::vector<std::uint32_t> activity_rank;  // per node, rank in the Zipf law
};

SynthDataset generate_synthetic(const SynthConfig& cfg);
// Writes the dataset files plus labels.csv (eid,kind) and communities.csv.
void save_synthetic(const SynthDataset& ds, const std::filesystem::path& dir);

// Maximum-likelihood Zipf exponent given counts[r] = draws of rank r + 1,
// found by golden-section search on [lo, hi]. Sort descending first when
// the true ranks are unknown.
double fit_zipf_exponent(std::span<const std::uint64_t> counts, double lo = 0.05, double hi = 4.0);

}  // namespace ctdg
