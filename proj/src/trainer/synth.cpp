#include "ctdg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>

#include "ctdg/error.hpp"
#include "ctdg/rng.hpp"

namespace ctdg {

void SynthConfig::validate() const {
  if (nodes < 2 || events == 0) throw ConfigError("synthetic graph needs >= 2 nodes and >= 1 event");
  if (communities == 0 || communities > nodes) throw ConfigError("communities must be in [1, nodes]");
  for (double p : {relocation, cross, spam, repeat})
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("probability knobs must be in [0, 1]");
  if (cross + spam > 1.0) throw ConfigError("cross + spam must not exceed 1");
  if (skew < 0.0) throw ConfigError("skew must be >= 0");
  if (spam > 0.0 && (hubs == 0 || hubs >= nodes)) throw ConfigError("spam needs 1 <= hubs < nodes");
  if (burst_length == 0 || recent_window == 0) throw ConfigError("burst length and recent window must be >= 1");
}

SynthDataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t N = cfg.nodes, C = cfg.communities;
  RngStream rng(cfg.seed, hash_tag("synth"));
  SynthDataset ds;

  // Hubs are the last `hubs` ids when spam is on; they never act as sources.
  const std::size_t H = cfg.spam > 0.0 ? cfg.hubs : 0;
  const std::size_t regular = N - H;
  ds.original.resize(N);
  for (std::size_t v = 0; v < N; ++v) ds.original[v] = static_cast<std::uint32_t>(rng.below(C));
  std::vector<std::uint32_t> comm = ds.original;
  std::vector<std::vector<NodeId>> members(C);
  std::vector<std::size_t> pos(N);
  for (std::size_t v = 0; v < regular; ++v) {
    pos[v] = members[comm[v]].size();
    members[comm[v]].push_back(static_cast<NodeId>(v));
  }

  // Activity: rank r (1-based) has weight r^-skew over a random order.
  ds.activity_rank.resize(N, 0);
  std::vector<NodeId> order(regular);
  std::iota(order.begin(), order.end(), 0u);
  for (std::size_t i = regular; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<double> cdf(regular);
  double acc = 0.0;
  for (std::size_t r = 0; r < regular; ++r) {
    ds.activity_rank[order[r]] = static_cast<std::uint32_t>(r + 1);
    acc += std::pow(double(r + 1), -cfg.skew);
    cdf[r] = acc;
  }
  auto draw_source = [&] {
    const double u = rng.uniform() * acc;
    const auto r = std::min<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), regular - 1);
    return order[r];
  };
  auto draw_member = [&](std::uint32_t c, NodeId self) -> NodeId {
    const auto& m = members[c];
    if (m.empty() || (m.size() == 1 && m[0] == self)) return static_cast<NodeId>(rng.below(regular));
    for (;;) {
      const NodeId v = m[rng.below(m.size())];
      if (v != self) return v;
    }
  };

  // Node features: original community centroid plus noise; hubs get noise.
  const std::size_t dv = cfg.d_v;
  std::vector<float> centroid(C * dv);
  for (auto& x : centroid) x = static_cast<float>(rng.normal());
  FeatureStore nf{N, dv, std::vector<float>(N * dv)};
  for (std::size_t v = 0; v < N; ++v)
    for (std::size_t c = 0; c < dv; ++c) {
      const float base = v < regular ? centroid[ds.original[v] * dv + c] : 0.0f;
      nf.data[v * dv + c] = base + static_cast<float>(cfg.feature_noise * rng.normal());
    }

  std::vector<std::deque<NodeId>> recent(N);
  std::vector<RawEvent> rows;
  rows.reserve(cfg.events);
  FeatureStore ef{cfg.events, cfg.d_e, {}};
  ef.data.reserve(cfg.events * cfg.d_e);
  ds.kind.reserve(cfg.events);
  double t = 0.0;
  for (std::size_t i = 0; i < cfg.events; ++i) {
    t += -std::log1p(-rng.uniform());  // unit-rate arrivals
    const NodeId u = draw_source();
    if (C > 1 && rng.uniform() < cfg.relocation) {
      auto& from = members[comm[u]];
      const NodeId last = from.back();
      from[pos[u]] = last;
      pos[last] = pos[u];
      from.pop_back();
      std::uint32_t to = static_cast<std::uint32_t>(rng.below(C - 1));
      if (to >= comm[u]) ++to;
      comm[u] = to;
      pos[u] = members[to].size();
      members[to].push_back(u);
      recent[u].clear();
      ds.relocation_times.push_back(t);
    }
    const double r = rng.uniform();
    NodeId v;
    LinkKind kind;
    if (r < cfg.spam) {
      const std::size_t burst = i / cfg.burst_length;
      v = static_cast<NodeId>(regular + mix64(cfg.seed ^ burst) % H);
      kind = LinkKind::spam;
    } else if (r < cfg.spam + cfg.cross) {
      v = static_cast<NodeId>(rng.below(regular));
      if (v == u) v = static_cast<NodeId>((v + 1) % regular);
      kind = comm[v] == comm[u] ? LinkKind::relevant : LinkKind::cross;
    } else {
      // Recent partners are kept only while they share u's community.
      auto& rq = recent[u];
      std::erase_if(rq, [&](NodeId w) { return comm[w] != comm[u]; });
      if (!rq.empty() && rng.uniform() < cfg.repeat) v = rq[rng.below(rq.size())];
      else v = draw_member(comm[u], u);
      kind = comm[v] == comm[u] ? LinkKind::relevant : LinkKind::cross;
    }
    if (kind == LinkKind::relevant) {
      for (NodeId a : {u, v}) {
        const NodeId b = a == u ? v : u;
        if (a >= regular || b >= regular) continue;
        auto& q = recent[a];
        q.push_back(b);
        if (q.size() > cfg.recent_window) q.pop_front();
      }
    }
    rows.push_back({std::int64_t(u), std::int64_t(v), t});
    for (std::size_t c = 0; c < cfg.d_e; ++c) ef.data.push_back(static_cast<float>(rng.normal()));
    ds.kind.push_back(kind);
  }
  ds.graph = build_graph(rows, N, ef, nf);
  ds.community = comm;
  return ds;
}

void save_synthetic(const SynthDataset& ds, const std::filesystem::path& dir) {
  save_dataset(ds.graph, dir);
  std::ofstream labels(dir / "labels.csv");
  labels << "eid,kind\n";
  for (std::size_t e = 0; e < ds.kind.size(); ++e) labels << e << ',' << int(ds.kind[e]) << '\n';
  std::ofstream comm(dir / "communities.csv");
  comm << "node,original,final,activity_rank\n";
  for (std::size_t v = 0; v < ds.community.size(); ++v)
    comm << v << ',' << ds.original[v] << ',' << ds.community[v] << ',' << ds.activity_rank[v] << '\n';
  if (!labels || !comm) throw ConfigError("cannot write label files under " + dir.string());
}

double fit_zipf_exponent(std::span<const std::uint64_t> counts, double lo, double hi) {
  if (counts.empty()) throw EvaluationError("no counts to fit");
  double total = 0.0, weighted_log = 0.0;
  for (std::size_t r = 0; r < counts.size(); ++r) {
    total += double(counts[r]);
    weighted_log += double(counts[r]) * std::log(double(r + 1));
  }
  auto nll = [&](double s) {
    double h = 0.0;
    for (std::size_t r = 0; r < counts.size(); ++r) h += std::pow(double(r + 1), -s);
    return s * weighted_log + total * std::log(h);
  };
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = nll(x1), f2 = nll(x2);
  for (int it = 0; it < 100; ++it) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = nll(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = nll(x2);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace ctdg
