#include "ctdg/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ctdg/error.hpp"

namespace ctdg {

SelectionMode parse_selection_mode(std::string_view name) {
  if (name == "adaptive") return SelectionMode::adaptive;
  if (name == "chronological") return SelectionMode::chronological;
  throw ConfigError("unknown selection mode '" + std::string(name) + "' (adaptive, chronological)");
}

std::string_view selection_mode_name(SelectionMode m) {
  return m == SelectionMode::adaptive ? "adaptive" : "chronological";
}

MinibatchSelector::MinibatchSelector(EidRange train, double gamma) : train_(train), gamma_(gamma) {
  if (train.size() == 0) throw ConfigError("the training range is empty");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be a finite value >= 0");
  scores_.assign(train.size(), 0.5 + gamma);
}

double MinibatchSelector::score(EventId e) const {
  if (e < train_.begin || e >= train_.end) throw IndexError("eid " + std::to_string(e) + " outside the training range");
  return scores_[e - train_.begin];
}

std::size_t MinibatchSelector::iterations_per_epoch(std::size_t b) const {
  if (b == 0) throw ConfigError("batch size must be >= 1");
  return (train_.size() + b - 1) / b;
}

std::vector<double> inclusion_probabilities(std::span<const double> w, std::size_t b) {
  const std::size_t N = w.size();
  if (b > N) throw ConfigError("batch size exceeds the number of edges");
  std::vector<double> pi(N, 0.0);
  std::vector<std::uint8_t> capped(N, 0);
  std::size_t left = b;
  // Each pass caps at least one entry or finishes, so N passes suffice.
  for (std::size_t pass = 0; pass <= N && left > 0; ++pass) {
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i)
      if (!capped[i]) total += w[i];
    if (!(total > 0.0)) throw ValidationError("selection weights must have positive mass");
    bool changed = false;
    for (std::size_t i = 0; i < N; ++i) {
      if (capped[i]) continue;
      pi[i] = static_cast<double>(left) * w[i] / total;
      if (pi[i] >= 1.0) {
        pi[i] = 1.0;
        capped[i] = 1;
        changed = true;
      }
    }
    if (!changed) break;
    left = b - static_cast<std::size_t>(std::count(capped.begin(), capped.end(), 1));
    if (left == 0)
      for (std::size_t i = 0; i < N; ++i)
        if (!capped[i]) pi[i] = 0.0;
  }
  return pi;
}

std::vector<EventId> MinibatchSelector::select_batch(std::size_t b, RngStream& rng) const {
  const std::size_t N = scores_.size();
  if (b == 0 || b > N) throw ConfigError("batch size must be in [1, " + std::to_string(N) + "]");
  const auto pi = inclusion_probabilities(scores_, b);
  std::vector<std::uint32_t> order(N);
  std::iota(order.begin(), order.end(), 0u);
  for (std::size_t i = N; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<EventId> out;
  out.reserve(b);
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k < N && out.size() < b; ++k) {
    const double next = acc + pi[order[k]];
    // Item k is picked when a point u + j falls in [acc, next).
    if (std::floor(next - u) > std::floor(acc - u)) out.push_back(static_cast<EventId>(train_.begin + order[k]));
    acc = next;
  }
  // Rounding can leave the last point just past the accumulated total.
  for (std::size_t k = N; out.size() < b && k-- > 0;) {
    const auto e = static_cast<EventId>(train_.begin + order[k]);
    if (pi[order[k]] > 0.0 && std::find(out.begin(), out.end(), e) == out.end()) out.push_back(e);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<EventId> MinibatchSelector::chronological_batch(std::size_t iter, std::size_t b) const {
  if (b == 0) throw ConfigError("batch size must be >= 1");
  const std::size_t lo = train_.begin + iter * b;
  if (lo >= train_.end) throw RangeError("iteration " + std::to_string(iter) + " is past the end of the epoch");
  const std::size_t hi = std::min(train_.end, lo + b);
  std::vector<EventId> out(hi - lo);
  std::iota(out.begin(), out.end(), static_cast<EventId>(lo));
  return out;
}

void MinibatchSelector::update_scores(std::span<const EventId> batch, std::span<const double> logits) {
  if (batch.size() != logits.size()) throw DimensionError("one logit per batch edge required");
  for (EventId e : batch)
    if (e < train_.begin || e >= train_.end)
      throw IndexError("eid " + std::to_string(e) + " outside the training range");
  for (std::size_t i = 0; i < batch.size(); ++i) {
    // exp overflow to inf still yields the correct limit of 0.
    scores_[batch[i] - train_.begin] = 1.0 / (1.0 + std::exp(-logits[i])) + gamma_;
  }
}

}  // namespace ctdg
