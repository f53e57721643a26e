#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctdg/bench.hpp"
#include "ctdg/error.hpp"
#include "ctdg/graph.hpp"
#include "ctdg/synth.hpp"
#include "ctdg/trainer.hpp"

namespace {

using namespace ctdg;
using nlohmann::json;

int exit_code(const Error& e) {
  switch (e.category()) {
    case Error::Category::config: return 1;
    case Error::Category::data: return 2;
    default: return 3;
  }
}

// Flags that override keys of the JSON run config.
struct TrainFlags {
  std::string config;
  std::string dataset, aggregator, decoder, finder, precision, output;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch, m, n, layers, d, d_time, eval_max_edges, workers, max_iters;
  std::optional<double> lr, gamma;
  std::optional<bool> adaptive_minibatch, adaptive_neighbor, deterministic;

  void add(CLI::App* app) {
    app->add_option("-c,--config", config, "JSON run config");
    app->add_option("--dataset", dataset, "dataset manifest");
    app->add_option("--aggregator", aggregator, "tgat | graphmixer");
    app->add_option("--decoder", decoder, "linear | gat | gatv2 | trans");
    app->add_option("--finder", finder, "auto | uniform | recent");
    app->add_option("--precision", precision, "f32 | f64");
    app->add_option("-o,--output", output, "output directory");
    app->add_option("--seed", seed, "single seed");
    app->add_option("--epochs", epochs);
    app->add_option("--batch", batch);
    app->add_option("--m", m, "finder budget");
    app->add_option("--n", n, "neighbors per target");
    app->add_option("--layers", layers);
    app->add_option("--d", d);
    app->add_option("--d-time", d_time);
    app->add_option("--eval-max-edges", eval_max_edges);
    app->add_option("--workers", workers);
    app->add_option("--max-iterations", max_iters, "cap on iterations per epoch");
    app->add_option("--lr", lr);
    app->add_option("--gamma", gamma);
    app->add_option("--adaptive-minibatch", adaptive_minibatch, "true | false");
    app->add_option("--adaptive-neighbor", adaptive_neighbor, "true | false");
    app->add_option("--deterministic", deterministic, "true | false");
  }

  RunConfig build() const {
    RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
    if (!dataset.empty()) c.dataset = dataset;
    if (!aggregator.empty()) c.aggregator = parse_aggregator(aggregator);
    if (!decoder.empty()) c.decoder = parse_decoder(decoder);
    if (!finder.empty()) c.finder = finder;
    if (!precision.empty()) {
      if (precision != "f32" && precision != "f64") throw ConfigError("precision must be f32 or f64");
      c.precision = precision == "f32" ? Precision::f32 : Precision::f64;
    }
    if (!output.empty()) c.output = output;
    if (seed) c.seeds = {*seed};
    if (epochs) c.epochs = *epochs;
    if (batch) c.batch = *batch;
    if (m) c.m = *m;
    if (n) c.n = *n;
    if (layers) c.layers = *layers;
    if (d) c.d = *d;
    if (d_time) c.d_time = *d_time;
    if (eval_max_edges) c.eval_max_edges = *eval_max_edges;
    if (workers) c.workers = *workers;
    if (max_iters) c.max_iterations_per_epoch = *max_iters;
    if (lr) c.lr = *lr;
    if (gamma) c.gamma = *gamma;
    if (adaptive_minibatch) c.adaptive_minibatch = *adaptive_minibatch;
    if (adaptive_neighbor) c.adaptive_neighbor = *adaptive_neighbor;
    if (deterministic) c.deterministic = *deterministic;
    apply_env_overrides(c);
    c.validate();
    return c;
  }
};

template <typename T>
json eval_checkpoint(const RunConfig& cfg, const std::string& checkpoint, const std::string& which) {
  const TemporalGraph g = load_run_graph(cfg);
  const SplitSpec split = chronological_split(g, cfg.split, cfg.window);
  Trainer<T> tr(cfg, g, split, cfg.seeds.front());
  tr.load(checkpoint);
  const EidRange range = which == "val" ? split.val : split.test;
  const auto res = tr.evaluate(range, cfg.eval_max_edges, hash_combine(cfg.seeds.front(), hash_tag(which)));
  return {{"split", which}, {"mrr", res.mrr}, {"edges", res.ranks.size()}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal adaptive sampling engine for link prediction on event streams"};
  app.require_subcommand(1);

  auto* ingest = app.add_subcommand("ingest", "convert a src,dst,ts[,features] file into a dataset");
  std::string events_path, node_features, out_dir;
  long edge_dim = -1;
  std::size_t num_nodes = 0;
  ingest->add_option("events", events_path, "event file")->required();
  ingest->add_option("-o,--output", out_dir, "dataset directory")->required();
  ingest->add_option("--edge-dim", edge_dim, "edge feature width (-1 infers)");
  ingest->add_option("--num-nodes", num_nodes, "node count (0 infers)");
  ingest->add_option("--node-features", node_features, "node feature matrix file");

  auto* synth = app.add_subcommand("synth", "generate the synthetic noisy event stream");
  SynthConfig sc;
  std::string synth_out;
  synth->add_option("-o,--output", synth_out, "dataset directory")->required();
  synth->add_option("--nodes", sc.nodes);
  synth->add_option("--events", sc.events);
  synth->add_option("--communities", sc.communities);
  synth->add_option("--d-v", sc.d_v);
  synth->add_option("--d-e", sc.d_e);
  synth->add_option("--skew", sc.skew);
  synth->add_option("--relocation", sc.relocation);
  synth->add_option("--cross", sc.cross);
  synth->add_option("--spam", sc.spam);
  synth->add_option("--hubs", sc.hubs);
  synth->add_option("--burst-length", sc.burst_length);
  synth->add_option("--repeat", sc.repeat);
  synth->add_option("--seed", sc.seed);

  auto* train = app.add_subcommand("train", "train and evaluate; writes metrics.json and timings.json");
  TrainFlags tf;
  tf.add(train);
  bool ablation = false;
  train->add_flag("--ablation", ablation, "run all four switch combinations");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  TrainFlags ef;
  ef.add(eval);
  std::string checkpoint, which = "test";
  eval->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval->add_option("--split", which, "val | test")->check(CLI::IsMember({"val", "test"}));

  auto* bf = app.add_subcommand("bench-finder", "batch finder throughput vs workers and a naive scan");
  FinderBenchConfig fb;
  std::string fb_policy = "uniform";
  bf->add_option("--nodes", fb.nodes);
  bf->add_option("--events", fb.events);
  bf->add_option("--queries", fb.queries);
  bf->add_option("--m", fb.m);
  bf->add_option("--workers", fb.workers, "worker counts to time");
  bf->add_option("--repeats", fb.repeats);
  bf->add_option("--policy", fb_policy)->check(CLI::IsMember({"uniform", "recent"}));
  bf->add_option("--seed", fb.seed);

  auto* bc = app.add_subcommand("bench-cache", "cache hit rate vs the oracle on a Zipf trace");
  CacheBenchConfig cb;
  bc->add_option("--edges", cb.edges);
  bc->add_option("--accesses", cb.accesses, "accesses per epoch");
  bc->add_option("--epochs", cb.epochs);
  bc->add_option("--skew", cb.skew);
  bc->add_option("--k-fraction", cb.k_fraction);
  bc->add_option("--epsilon", cb.epsilon);
  bc->add_flag("--cumulative", cb.cumulative);
  bc->add_option("--seed", cb.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*ingest) {
      IngestConfig ic;
      ic.edge_feature_dim = edge_dim;
      ic.num_nodes = num_nodes;
      if (!node_features.empty()) ic.node_features = node_features;
      const TemporalGraph g = ingest_events(events_path, ic);
      validate_graph(g);
      save_dataset(g, out_dir);
      std::cout << json{{"nodes", g.num_nodes}, {"events", g.num_events()}, {"d_v", g.d_v()}, {"d_e", g.d_e()}}.dump()
                << '\n';
    } else if (*synth) {
      RunConfig env;
      apply_env_overrides(env);
      if (std::getenv("CTDG_SEED")) sc.seed = env.seeds.front();
      const SynthDataset ds = generate_synthetic(sc);
      save_synthetic(ds, synth_out);
      std::cout << json{{"nodes", ds.graph.num_nodes}, {"events", ds.graph.num_events()}}.dump() << '\n';
    } else if (*train) {
      const RunConfig cfg = tf.build();
      const json out = ablation ? run_ablation(cfg) : run_experiment(cfg);
      std::cout << (ablation ? out.dump(2) : out["summary"].dump(2)) << '\n';
    } else if (*eval) {
      const RunConfig cfg = ef.build();
      const json out = cfg.precision == Precision::f32 ? eval_checkpoint<float>(cfg, checkpoint, which)
                                                       : eval_checkpoint<double>(cfg, checkpoint, which);
      std::cout << out.dump(2) << '\n';
    } else if (*bf) {
      fb.policy = fb_policy == "uniform" ? FinderPolicy::uniform : FinderPolicy::recent;
      std::cout << bench_finder(fb).to_json().dump(2) << '\n';
    } else if (*bc) {
      std::cout << bench_cache(cb).dump(2) << '\n';
    }
  } catch (const Error& e) {
    std::cerr << json{{"error", e.what()}, {"exit_code", exit_code(e)}}.dump() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"exit_code", 3}}.dump() << '\n';
    return 3;
  }
  return 0;
}
