#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "ctdg/graph.hpp"
#include "ctdg/rng.hpp"

namespace ctdg {

enum class SelectionMode { adaptive, chronological };
SelectionMode parse_selection_mode(std::string_view name);
std::string_view selection_mode_name(SelectionMode m);

// Per-training-edge importance scores P(e) = sigmoid(logit) + gamma.
class MinibatchSelector {
 public:
  // Scores start at 0.5 + gamma, the value for a zero logit.
  MinibatchSelector(EidRange train, double gamma = 0.1);

  const EidRange& range() const noexcept { return train_; }
  double gamma() const noexcept { return gamma_; }
  std::span<const double> scores() const noexcept { return scores_; }
  double score(EventId e) const;

  // ceil(|train| / b).
  std::size_t iterations_per_epoch(std::size_t b) const;

  // b distinct eids with inclusion probability proportional to P (capped at
  // one), ascending. Systematic sampling over a fresh random order.
  std::vector<EventId> select_batch(std::size_t b, RngStream& rng) const;
  // The iter-th consecutive block of b training eids.
  std::vector<EventId> chronological_batch(std::size_t iter, std::size_t b) const;

  // Overwrites P for the given positive edges.
  void update_scores(std::span<const EventId> batch, std::span<const double> logits);

 private:
  EidRange train_;
  double gamma_;
  std::vector<double> scores_;
};

// Inclusion probabilities for a without-replacement batch of size b under
// weights w: pi_i = b w_i / sum(w), with entries above one capped and the
// remainder redistributed. Sums to b.
std::vector<double> inclusion_probabilities(std::span<const double> w, std::size_t b);

}  // namespace ctdg
