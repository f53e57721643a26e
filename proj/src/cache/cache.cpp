#include "ctdg/cache.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "ctdg/error.hpp"

namespace ctdg {

std::size_t CacheConfig::resolved_epsilon() const {
  if (epsilon >= 0) return static_cast<std::size_t>(epsilon);
  return static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(k) - 1e-9));
}

FeatureCache::FeatureCache(std::size_t num_edges, const CacheConfig& cfg, const FeatureStore* features)
    : cfg_(cfg), epsilon_(cfg.resolved_epsilon()), features_(features), counters_(num_edges, 0),
      resident_(num_edges, 0) {
  if (features_ && !features_->empty() && features_->rows != num_edges) {
    throw DimensionError("feature rows differ from the edge count");
  }
}

std::vector<std::uint8_t> FeatureCache::lookup(std::span<const EventId> eids, std::vector<float>* out) {
  const std::size_t N = counters_.size();
  for (EventId e : eids)
    if (e >= N) throw IndexError("eid " + std::to_string(e) + " outside the cache's " + std::to_string(N) + " edges");
  const std::size_t cols = features_ ? features_->cols : 0;
  if (out) out->resize(eids.size() * cols);
  std::vector<std::uint8_t> hit(eids.size());
  std::uint64_t hits = 0;
  for (std::size_t i = 0; i < eids.size(); ++i) {
    const EventId e = eids[i];
    hit[i] = resident_[e];
    hits += hit[i];
    if (std::atomic_ref<std::uint32_t>(counters_[e]).fetch_add(1, std::memory_order_relaxed) == 0) {
      std::lock_guard lock(touched_mu_);
      touched_.push_back(e);
    }
    if (out && cols) std::copy_n(features_->row(e), cols, out->data() + i * cols);
  }
  const std::uint64_t misses = eids.size() - hits;
  std::atomic_ref<std::uint64_t>(current_.hits).fetch_add(hits, std::memory_order_relaxed);
  std::atomic_ref<std::uint64_t>(current_.misses).fetch_add(misses, std::memory_order_relaxed);
  if (cfg_.slow_ns_per_element > 0 && cols) {
    std::atomic_ref<double>(current_.slow_ns)
        .fetch_add(cfg_.slow_ns_per_element * double(misses * cols), std::memory_order_relaxed);
  }
  return hit;
}

std::vector<EventId> FeatureCache::top_k() const {
  std::vector<EventId> cand = touched_;
  const std::size_t k = std::min(cfg_.k, cand.size());
  auto better = [&](EventId a, EventId b) {
    return counters_[a] != counters_[b] ? counters_[a] > counters_[b] : a < b;
  };
  std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), better);
  cand.resize(k);
  std::sort(cand.begin(), cand.end(), better);
  return cand;
}

bool FeatureCache::maybe_replace() {
  const auto top = top_k();
  std::size_t overlap = 0;
  for (EventId e : top) overlap += resident_[e];
  const bool replace = overlap < epsilon_;
  if (replace) {
    for (EventId e : resident_list_) resident_[e] = 0;
    for (EventId e : top) resident_[e] = 1;
    resident_list_ = top;
  }
  current_.replaced = replace;
  closed_.push_back(current_);
  current_ = CacheEpoch{};
  if (!cfg_.cumulative) {
    for (EventId e : touched_) counters_[e] = 0;
    touched_.clear();
  }
  return replace;
}

std::uint32_t FeatureCache::counter(EventId e) const {
  if (e >= counters_.size()) throw IndexError("eid outside the cache");
  return counters_[e];
}

bool FeatureCache::resident(EventId e) const {
  if (e >= resident_.size()) throw IndexError("eid outside the cache");
  return resident_[e];
}

std::vector<EventId> FeatureCache::resident_set() const {
  std::vector<EventId> out = resident_list_;
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<CacheEpoch> oracle_cache(const AccessTrace& trace, std::size_t num_edges, std::size_t k) {
  std::vector<CacheEpoch> out;
  CacheConfig cfg;
  cfg.k = k;
  for (const auto& epoch : trace) {
    FeatureCache counts(num_edges, cfg);
    counts.lookup(epoch);
    std::uint64_t hits = 0;
    for (EventId e : counts.top_k()) hits += counts.counter(e);
    CacheEpoch s;
    s.hits = hits;
    s.misses = epoch.size() - hits;
    out.push_back(s);
  }
  return out;
}

std::vector<CacheEpoch> simulate_cache(const AccessTrace& trace, std::size_t num_edges, const CacheConfig& cfg) {
  FeatureCache cache(num_edges, cfg);
  for (const auto& epoch : trace) {
    cache.lookup(epoch);
    cache.maybe_replace();
  }
  return cache.epochs();
}

nlohmann::json cache_report(const std::vector<CacheEpoch>& cache, const std::vector<CacheEpoch>& oracle,
                            const CacheConfig& cfg, std::size_t resident_size) {
  nlohmann::json j;
  j["k"] = cfg.k;
  j["epsilon"] = cfg.resolved_epsilon();
  j["cumulative"] = cfg.cumulative;
  j["resident_size"] = resident_size;
  std::size_t replacements = 0;
  auto& arr = j["epochs"] = nlohmann::json::array();
  for (std::size_t i = 0; i < cache.size(); ++i) {
    const auto& c = cache[i];
    replacements += c.replaced;
    nlohmann::json e{{"epoch", i + 1},       {"hits", c.hits},         {"misses", c.misses},
                     {"hit_rate", c.hit_rate()}, {"zero_requests", c.zero_requests()}, {"replaced", c.replaced}};
    if (c.slow_ns > 0) e["slow_ns"] = c.slow_ns;
    if (i < oracle.size()) e["oracle_hit_rate"] = oracle[i].hit_rate();
    arr.push_back(std::move(e));
  }
  j["replacements"] = replacements;
  return j;
}

ZipfSampler::ZipfSampler(std::size_t num_edges, double s, std::uint64_t seed) {
  if (num_edges == 0) throw ConfigError("zipf support must be non-empty");
  cdf_.resize(num_edges);
  double acc = 0.0;
  for (std::size_t r = 0; r < num_edges; ++r) {
    acc += std::pow(double(r + 1), -s);
    cdf_[r] = acc;
  }
  for (auto& c : cdf_) c /= acc;
  rank_to_eid_.resize(num_edges);
  std::iota(rank_to_eid_.begin(), rank_to_eid_.end(), 0u);
  RngStream rng(seed, hash_tag("zipf"));
  for (std::size_t i = num_edges; i > 1; --i) std::swap(rank_to_eid_[i - 1], rank_to_eid_[rng.below(i)]);
}

EventId ZipfSampler::operator()(RngStream& rng) const {
  const double u = rng.uniform();
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  const auto r = std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  return rank_to_eid_[r];
}

}  // namespace ctdg
