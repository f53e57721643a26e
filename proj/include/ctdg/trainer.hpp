#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctdg/cache.hpp"
#include "ctdg/finder.hpp"
#include "ctdg/graph.hpp"
#include "ctdg/model.hpp"
#include "ctdg/nn/params.hpp"
#include "ctdg/sampler.hpp"
#include "ctdg/selector.hpp"
#include "ctdg/synth.hpp"

namespace ctdg {

enum class Precision { f32, f64 };

struct RunConfig {
  // Dataset manifest; when empty the `synthetic` block is generated instead.
  std::filesystem::path dataset;
  std::optional<SynthConfig> synthetic;
  std::array<double, 3> split{0.6, 0.2, 0.2};
  std::optional<std::size_t> window;

  AggregatorKind aggregator = AggregatorKind::graphmixer;
  std::size_t layers = 1;
  std::size_t d = 100;
  std::size_t d_time = 100;
  bool token_mixing = true;

  DecoderKind decoder = DecoderKind::linear;
  std::size_t sampler_d_feat = 8;
  std::size_t sampler_d_time = 8;
  std::size_t sampler_d_freq = 8;
  std::size_t sampler_d_att = 16;
  bool attention_on_mixer = true;
  TgatLossForm tgat_loss = TgatLossForm::chain;

  std::size_t m = 25;
  std::size_t n = 10;
  std::size_t batch = 600;
  std::size_t epochs = 200;
  // 0 runs full epochs.
  std::size_t max_iterations_per_epoch = 0;
  double lr = 1e-4;
  // Negative reuses lr.
  double sampler_lr = -1.0;
  double gamma = 0.1;
  std::int64_t epsilon = -1;
  double cache_fraction = 0.1;
  std::vector<std::uint64_t> seeds{0};
  bool adaptive_minibatch = true;
  bool adaptive_neighbor = true;
  // "auto" picks uniform for tgat and recent for graphmixer.
  std::string finder = "auto";

  std::size_t eval_negatives = 49;
  std::size_t eval_batch = 200;
  // 0 evaluates every edge of the split; otherwise an evenly spaced subset.
  std::size_t eval_max_edges = 0;
  // Validation MRR every this many epochs; 0 only after the last one.
  std::size_t eval_every = 1;

  bool deterministic = false;
  std::size_t workers = 1;
  Precision precision = Precision::f32;
  std::filesystem::path output;
  bool checkpoints = true;

  double resolved_sampler_lr() const { return sampler_lr > 0 ? sampler_lr : lr; }
  FinderPolicy resolved_finder() const;
  ModelConfig model_config() const;
  SamplerConfig sampler_config() const;
  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);
// CTDG_SEED replaces the seed list with one seed; CTDG_WORKERS sets workers.
void apply_env_overrides(RunConfig& c);

// `count` uniform draws from pool, skipping `exclude` when given.
std::vector<NodeId> sample_negatives(std::span<const NodeId> pool, std::size_t count, RngStream& rng,
                                     std::optional<NodeId> exclude = std::nullopt);
// Sorted distinct destinations of the events in range.
std::vector<NodeId> destination_pool(const TemporalGraph& g, EidRange range);

// 1 + number of negatives scoring at least as high as the positive.
std::size_t pessimistic_rank(double pos, std::span<const double> negs);
double mean_reciprocal_rank(std::span<const std::size_t> ranks);

// Candidates of one evaluation batch: row i holds the true destination
// followed by the negatives, k = 1 + negatives per row.
struct EvalBatch {
  std::size_t k = 0;
  std::vector<NodeId> src;
  std::vector<double> t;
  std::vector<EventId> eid;
  std::vector<NodeId> cand;  // src.size() * k
};
// Returns one logit per candidate, row-major like cand.
using LinkScorer = std::function<std::vector<double>(const EvalBatch&)>;

struct EvalOptions {
  std::size_t num_negatives = 49;
  std::size_t batch = 200;
  std::size_t max_edges = 0;
  std::uint64_t seed = 0;
};

struct MrrResult {
  double mrr = 0.0;
  std::vector<std::size_t> ranks;
};

// Chronological batches over the split; negatives for edge e come from
// RngStream(seed, "eval", e) so they do not depend on the batching.
MrrResult evaluate_mrr(const TemporalGraph& g, EidRange split, const LinkScorer& score, const EvalOptions& opt,
                       std::span<const NodeId> pool);

struct PhaseTimes {
  double nf = 0.0;  // neighbor finding
  double as = 0.0;  // adaptive sampling
  double fs = 0.0;  // feature slicing
  double pp = 0.0;  // propagation
  double other = 0.0;
  double phases() const noexcept { return nf + as + fs + pp; }
  PhaseTimes& operator+=(const PhaseTimes& o);
};

struct IterationStats {
  double loss = 0.0;
  double sample_loss = 0.0;
  std::size_t batch = 0;
  std::vector<EventId> eids;
  std::vector<double> pos_logits;
  PhaseTimes times;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t iterations = 0;
  double train_loss = 0.0;
  double sample_loss = 0.0;
  std::optional<double> val_mrr;
  PhaseTimes times;
  double epoch_seconds = 0.0;
  double eval_seconds = 0.0;
  CacheEpoch cache;
};

template <typename T>
class Trainer {
 public:
  Trainer(const RunConfig& cfg, const TemporalGraph& g, const SplitSpec& split, std::uint64_t seed);
  ~Trainer();
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const RunConfig& config() const noexcept { return cfg_; }
  std::size_t iterations_per_epoch() const;
  IterationStats train_iteration();
  EpochRecord train_epoch();
  MrrResult evaluate(EidRange range, std::size_t max_edges, std::uint64_t eval_seed);

  nn::ParamStore<T>& model_store() noexcept { return model_store_; }
  nn::ParamStore<T>& sampler_store() noexcept { return sampler_store_; }
  const TemporalModel<T>& model() const noexcept { return *model_; }
  bool has_sampler() const noexcept { return sampler_ != nullptr; }
  const MinibatchSelector& selector() const noexcept { return selector_; }
  const FeatureCache& cache() const noexcept { return cache_; }
  // Event reads checked against their query time so far.
  std::uint64_t causality_checks() const noexcept { return causality_checks_; }

  // When on, the model gradients of each iteration are copied before the
  // optimizer step and exposed here, in store order.
  void capture_gradients(bool on) noexcept { capture_ = on; }
  const std::vector<nn::Tensor<T>>& last_model_gradients() const noexcept { return last_grads_; }

  void save(const std::filesystem::path& dir) const;
  void load(const std::filesystem::path& dir);

 private:
  std::vector<Neighborhood> find(const std::vector<NodeId>& nodes, const std::vector<double>& times,
                                 std::uint64_t seed) const;

  RunConfig cfg_;
  const TemporalGraph& g_;
  SplitSpec split_;
  std::uint64_t seed_;
  FinderPolicy policy_;
  nn::ParamStore<T> model_store_;
  nn::ParamStore<T> sampler_store_;
  std::unique_ptr<TemporalModel<T>> model_;
  std::unique_ptr<AdaptiveSampler<T>> sampler_;
  MinibatchSelector selector_;
  FeatureCache cache_;
  std::vector<NodeId> train_pool_;
  std::vector<NodeId> eval_pool_;
  std::size_t iteration_ = 0;
  std::size_t epoch_ = 0;
  std::size_t epoch_iteration_ = 0;
  mutable std::uint64_t causality_checks_ = 0;
  bool capture_ = false;
  std::vector<nn::Tensor<T>> last_grads_;
  std::vector<float> fs_buffer_;
};

// Trains and evaluates one run per seed, writes metrics.json,
// timings.json and checkpoints under cfg.output (when set), and returns
// the metrics document. Deterministic mode keeps wall-clock fields out of
// metrics.json.
nlohmann::json run_experiment(const RunConfig& cfg);
// The four combinations of the two adaptive switches.
nlohmann::json run_ablation(const RunConfig& cfg);
// Loads the dataset or generates the synthetic one.
TemporalGraph load_run_graph(const RunConfig& cfg);

}  // namespace ctdg
