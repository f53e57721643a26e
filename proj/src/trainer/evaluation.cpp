#include <algorithm>
#include <cmath>

#include "ctdg/error.hpp"
#include "ctdg/trainer.hpp"

namespace ctdg {

std::vector<NodeId> sample_negatives(std::span<const NodeId> pool, std::size_t count, RngStream& rng,
                                     std::optional<NodeId> exclude) {
  if (pool.empty()) throw EvaluationError("empty negative pool");
  if (exclude && std::all_of(pool.begin(), pool.end(), [&](NodeId v) { return v == *exclude; })) {
    throw EvaluationError("negative pool holds only the excluded node");
  }
  std::vector<NodeId> out(count);
  for (auto& v : out) {
    do {
      v = pool[rng.below(pool.size())];
    } while (exclude && v == *exclude);
  }
  return out;
}

std::vector<NodeId> destination_pool(const TemporalGraph& g, EidRange range) {
  if (range.end > g.num_events() || range.begin > range.end) throw RangeError("event range outside the graph");
  std::vector<NodeId> out;
  out.reserve(range.size());
  for (std::size_t e = range.begin; e < range.end; ++e) out.push_back(g.events[e].dst);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::size_t pessimistic_rank(double pos, std::span<const double> negs) {
  if (!std::isfinite(pos)) throw EvaluationError("non-finite positive logit");
  std::size_t rank = 1;
  for (double x : negs) {
    if (std::isnan(x)) throw EvaluationError("NaN negative logit");
    if (x >= pos) ++rank;
  }
  return rank;
}

double mean_reciprocal_rank(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw EvaluationError("no ranks to average");
  double s = 0.0;
  for (std::size_t r : ranks) {
    if (r == 0) throw EvaluationError("ranks start at 1");
    s += 1.0 / static_cast<double>(r);
  }
  return s / static_cast<double>(ranks.size());
}

MrrResult evaluate_mrr(const TemporalGraph& g, EidRange split, const LinkScorer& score, const EvalOptions& opt,
                       std::span<const NodeId> pool) {
  if (split.size() == 0) throw EvaluationError("empty evaluation split");
  if (split.end > g.num_events()) throw RangeError("evaluation split outside the graph");
  if (opt.batch == 0) throw ConfigError("evaluation batch must be >= 1");
  std::vector<EventId> edges;
  if (opt.max_edges == 0 || opt.max_edges >= split.size()) {
    edges.resize(split.size());
    for (std::size_t i = 0; i < split.size(); ++i) edges[i] = static_cast<EventId>(split.begin + i);
  } else {
    edges.resize(opt.max_edges);
    for (std::size_t i = 0; i < opt.max_edges; ++i)
      edges[i] = static_cast<EventId>(split.begin + i * split.size() / opt.max_edges);
  }
  const std::size_t k = 1 + opt.num_negatives;
  MrrResult res;
  res.ranks.reserve(edges.size());
  for (std::size_t lo = 0; lo < edges.size(); lo += opt.batch) {
    const std::size_t hi = std::min(edges.size(), lo + opt.batch);
    EvalBatch eb;
    eb.k = k;
    for (std::size_t i = lo; i < hi; ++i) {
      const Event& ev = g.events[edges[i]];
      eb.src.push_back(ev.src);
      eb.t.push_back(ev.ts);
      eb.eid.push_back(ev.eid);
      eb.cand.push_back(ev.dst);
      RngStream rng(opt.seed, hash_tag("eval"), ev.eid);
      const auto negs = sample_negatives(pool, opt.num_negatives, rng, ev.dst);
      eb.cand.insert(eb.cand.end(), negs.begin(), negs.end());
    }
    const auto logits = score(eb);
    if (logits.size() != eb.cand.size()) throw EvaluationError("scorer returned the wrong number of logits");
    for (std::size_t r = 0; r < eb.src.size(); ++r) {
      const double* row = logits.data() + r * k;
      res.ranks.push_back(pessimistic_rank(row[0], std::span<const double>(row + 1, k - 1)));
    }
  }
  res.mrr = mean_reciprocal_rank(res.ranks);
  return res;
}

}  // namespace ctdg
