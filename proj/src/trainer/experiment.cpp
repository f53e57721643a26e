#include <chrono>
#include <cmath>
#include <fstream>

#include "ctdg/error.hpp"
#include "ctdg/trainer.hpp"

namespace ctdg {

using nlohmann::json;

TemporalGraph load_run_graph(const RunConfig& cfg) {
  if (!cfg.dataset.empty()) return load_dataset(cfg.dataset);
  if (!cfg.synthetic) throw ConfigError("either dataset or synthetic must be given");
  return generate_synthetic(*cfg.synthetic).graph;
}

namespace {

json mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= double(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  const double sd = xs.size() > 1 ? std::sqrt(var / double(xs.size() - 1)) : 0.0;
  return {{"mean", mean}, {"std", sd}, {"n", xs.size()}};
}

json times_json(const EpochRecord& r) {
  return {{"nf", r.times.nf},
          {"as", r.times.as},
          {"fs", r.times.fs},
          {"pp", r.times.pp},
          {"other", r.times.other},
          {"epoch", r.epoch_seconds},
          {"eval", r.eval_seconds},
          {"phase_share", r.epoch_seconds > 0 ? r.times.phases() / r.epoch_seconds : 0.0}};
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw ConfigError("cannot write " + path.string());
}

struct SeedRun {
  json metrics;
  json timings;
  double val = 0.0;
  double test = 0.0;
  double loss = 0.0;
};

template <typename T>
SeedRun run_seed(const RunConfig& cfg, const TemporalGraph& g, const SplitSpec& split, std::uint64_t seed) {
  Trainer<T> tr(cfg, g, split, seed);
  const auto ckpt = cfg.output / "checkpoints" / ("seed-" + std::to_string(seed));
  const bool save = cfg.checkpoints && !cfg.output.empty();
  SeedRun out;
  json epochs = json::array(), timings = json::array();
  double best = -1.0, last_val = 0.0;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    EpochRecord rec = tr.train_epoch();
    if ((cfg.eval_every && e % cfg.eval_every == 0) || e == cfg.epochs) {
      const auto t0 = std::chrono::steady_clock::now();
      rec.val_mrr = tr.evaluate(split.val, cfg.eval_max_edges, hash_combine(seed, hash_tag("val"))).mrr;
      rec.eval_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      last_val = *rec.val_mrr;
      if (save && last_val > best) tr.save(ckpt / "best");
      best = std::max(best, last_val);
    }
    json j = {{"epoch", rec.epoch},
              {"iterations", rec.iterations},
              {"train_loss", rec.train_loss},
              {"sample_loss", rec.sample_loss},
              {"val_mrr", rec.val_mrr ? json(*rec.val_mrr) : json(nullptr)},
              {"cache",
               {{"hits", rec.cache.hits},
                {"misses", rec.cache.misses},
                {"hit_rate", rec.cache.hit_rate()},
                {"replaced", rec.cache.replaced}}}};
    if (!cfg.deterministic) j["times"] = times_json(rec);
    epochs.push_back(std::move(j));
    timings.push_back(times_json(rec));
    out.loss = rec.train_loss;
  }
  out.val = last_val;
  out.test = tr.evaluate(split.test, cfg.eval_max_edges, hash_combine(seed, hash_tag("test"))).mrr;
  if (save) tr.save(ckpt / "final");
  out.metrics = {{"seed", seed},
                 {"epochs", std::move(epochs)},
                 {"final", {{"val_mrr", out.val}, {"test_mrr", out.test}, {"train_loss", out.loss}}},
                 {"causality_checks", tr.causality_checks()}};
  out.timings = {{"seed", seed}, {"epochs", std::move(timings)}};
  return out;
}

}  // namespace

json run_experiment(const RunConfig& cfg) {
  cfg.validate();
  const TemporalGraph g = load_run_graph(cfg);
  const SplitSpec split = chronological_split(g, cfg.split, cfg.window);
  json runs = json::array(), timings = json::array();
  std::vector<double> val, test, loss;
  for (std::uint64_t seed : cfg.seeds) {
    SeedRun r = cfg.precision == Precision::f32 ? run_seed<float>(cfg, g, split, seed)
                                                : run_seed<double>(cfg, g, split, seed);
    runs.push_back(std::move(r.metrics));
    timings.push_back(std::move(r.timings));
    val.push_back(r.val);
    test.push_back(r.test);
    loss.push_back(r.loss);
  }
  json echo = run_config_to_json(cfg);
  echo.erase("output");
  json metrics = {{"config", std::move(echo)},
                  {"split",
                   {{"train", {split.train.begin, split.train.end}},
                    {"val", {split.val.begin, split.val.end}},
                    {"test", {split.test.begin, split.test.end}}}},
                  {"runs", std::move(runs)},
                  {"summary", {{"val_mrr", mean_std(val)}, {"test_mrr", mean_std(test)}, {"train_loss", mean_std(loss)}}}};
  if (!cfg.output.empty()) {
    write_json(cfg.output / "metrics.json", metrics);
    write_json(cfg.output / "timings.json", json{{"runs", std::move(timings)}});
  }
  return metrics;
}

json run_ablation(const RunConfig& cfg) {
  json records = json::array();
  for (int combo = 0; combo < 4; ++combo) {
    RunConfig c = cfg;
    c.adaptive_minibatch = combo & 1;
    c.adaptive_neighbor = combo & 2;
    const std::string name = std::string(c.adaptive_minibatch ? "adaptive" : "chronological") + "-" +
                             (c.adaptive_neighbor ? "adaptive" : "static");
    if (!cfg.output.empty()) c.output = cfg.output / name;
    const json m = run_experiment(c);
    records.push_back({{"name", name},
                       {"adaptive_minibatch", c.adaptive_minibatch},
                       {"adaptive_neighbor", c.adaptive_neighbor},
                       {"summary", m["summary"]}});
  }
  json out = {{"records", std::move(records)}};
  if (!cfg.output.empty()) write_json(cfg.output / "ablation.json", out);
  return out;
}

}  // namespace ctdg
