#include <cstdlib>
#include <fstream>
#include <set>

#include "ctdg/error.hpp"
#include "ctdg/trainer.hpp"

namespace ctdg {

using nlohmann::json;

FinderPolicy RunConfig::resolved_finder() const {
  if (finder == "uniform") return FinderPolicy::uniform;
  if (finder == "recent") return FinderPolicy::recent;
  if (finder == "auto") return aggregator == AggregatorKind::tgat ? FinderPolicy::uniform : FinderPolicy::recent;
  throw ConfigError("unknown finder '" + finder + "' (auto, uniform, recent)");
}

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.aggregator = aggregator;
  mc.layers = layers;
  mc.d = d;
  mc.d_time = d_time;
  mc.n = n;
  mc.token_mixing = token_mixing;
  return mc;
}

SamplerConfig RunConfig::sampler_config() const {
  SamplerConfig sc;
  sc.decoder = decoder;
  sc.n = n;
  sc.enc.d_feat = sampler_d_feat;
  sc.enc.d_time = sampler_d_time;
  sc.enc.d_freq = sampler_d_freq;
  sc.enc.m = m;
  sc.d_att = sampler_d_att;
  sc.attention_on_mixer = attention_on_mixer;
  return sc;
}

void RunConfig::validate() const {
  if (dataset.empty() && !synthetic) throw ConfigError("either dataset or synthetic must be given");
  if (synthetic) synthetic->validate();
  if (m == 0 || n == 0 || batch == 0 || epochs == 0) throw ConfigError("m, n, batch and epochs must be >= 1");
  if (n > m) throw ConfigError("n must not exceed m");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(gamma > 0)) throw ConfigError("gamma must be positive");
  if (!(cache_fraction >= 0 && cache_fraction <= 1)) throw ConfigError("cache_fraction must be in [0, 1]");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (eval_negatives == 0 || eval_batch == 0) throw ConfigError("eval_negatives and eval_batch must be >= 1");
  if (workers == 0) throw ConfigError("workers must be >= 1");
  resolved_finder();
  model_config().validate();
  if (adaptive_neighbor) sampler_config().validate();
}

namespace {

const char* precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

json synth_to_json(const SynthConfig& s) {
  return {{"nodes", s.nodes},       {"events", s.events},         {"communities", s.communities},
          {"d_v", s.d_v},           {"d_e", s.d_e},               {"skew", s.skew},
          {"relocation", s.relocation}, {"cross", s.cross},       {"spam", s.spam},
          {"hubs", s.hubs},         {"burst_length", s.burst_length}, {"repeat", s.repeat},
          {"recent_window", s.recent_window}, {"feature_noise", s.feature_noise}, {"seed", s.seed}};
}

// Copies j[key] into out when present, mapping type errors to ConfigError.
template <typename V>
void take(const json& j, const char* key, V& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError(std::string("unknown key '") + it.key() + "' in " + where);
}

SynthConfig synth_from_json(const json& j) {
  check_keys(j, {"nodes", "events", "communities", "d_v", "d_e", "skew", "relocation", "cross", "spam", "hubs",
                 "burst_length", "repeat", "recent_window", "feature_noise", "seed"},
             "synthetic");
  SynthConfig s;
  take(j, "nodes", s.nodes);
  take(j, "events", s.events);
  take(j, "communities", s.communities);
  take(j, "d_v", s.d_v);
  take(j, "d_e", s.d_e);
  take(j, "skew", s.skew);
  take(j, "relocation", s.relocation);
  take(j, "cross", s.cross);
  take(j, "spam", s.spam);
  take(j, "hubs", s.hubs);
  take(j, "burst_length", s.burst_length);
  take(j, "repeat", s.repeat);
  take(j, "recent_window", s.recent_window);
  take(j, "feature_noise", s.feature_noise);
  take(j, "seed", s.seed);
  return s;
}

}  // namespace

json run_config_to_json(const RunConfig& c) {
  json j = {{"dataset", c.dataset.string()},
            {"split", c.split},
            {"aggregator", aggregator_name(c.aggregator)},
            {"layers", c.layers},
            {"d", c.d},
            {"d_time", c.d_time},
            {"token_mixing", c.token_mixing},
            {"decoder", decoder_name(c.decoder)},
            {"sampler_d_feat", c.sampler_d_feat},
            {"sampler_d_time", c.sampler_d_time},
            {"sampler_d_freq", c.sampler_d_freq},
            {"sampler_d_att", c.sampler_d_att},
            {"attention_on_mixer", c.attention_on_mixer},
            {"tgat_loss", c.tgat_loss == TgatLossForm::chain ? "chain" : "printed"},
            {"m", c.m},
            {"n", c.n},
            {"batch", c.batch},
            {"epochs", c.epochs},
            {"max_iterations_per_epoch", c.max_iterations_per_epoch},
            {"lr", c.lr},
            {"sampler_lr", c.sampler_lr},
            {"gamma", c.gamma},
            {"epsilon", c.epsilon},
            {"cache_fraction", c.cache_fraction},
            {"seeds", c.seeds},
            {"adaptive_minibatch", c.adaptive_minibatch},
            {"adaptive_neighbor", c.adaptive_neighbor},
            {"finder", c.finder},
            {"eval_negatives", c.eval_negatives},
            {"eval_batch", c.eval_batch},
            {"eval_max_edges", c.eval_max_edges},
            {"eval_every", c.eval_every},
            {"deterministic", c.deterministic},
            {"workers", c.workers},
            {"precision", precision_name(c.precision)},
            {"output", c.output.string()},
            {"checkpoints", c.checkpoints}};
  j["window"] = c.window ? json(*c.window) : json(nullptr);
  j["synthetic"] = c.synthetic ? synth_to_json(*c.synthetic) : json(nullptr);
  return j;
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"dataset", "synthetic", "split", "window", "aggregator", "layers", "d", "d_time", "token_mixing",
                 "decoder", "sampler_d_feat", "sampler_d_time", "sampler_d_freq", "sampler_d_att",
                 "attention_on_mixer", "tgat_loss", "m", "n", "batch", "epochs", "max_iterations_per_epoch", "lr",
                 "sampler_lr", "gamma", "epsilon", "cache_fraction", "seeds", "seed", "adaptive_minibatch",
                 "adaptive_neighbor", "finder", "eval_negatives", "eval_batch", "eval_max_edges", "eval_every",
                 "deterministic", "workers", "precision", "output", "checkpoints"},
             "run config");
  RunConfig c;
  std::string s;
  if (j.contains("dataset")) {
    take(j, "dataset", s);
    c.dataset = s;
  }
  if (j.contains("synthetic") && !j["synthetic"].is_null()) c.synthetic = synth_from_json(j["synthetic"]);
  take(j, "split", c.split);
  if (j.contains("window") && !j["window"].is_null()) {
    std::size_t w = 0;
    take(j, "window", w);
    c.window = w;
  }
  if (j.contains("aggregator")) {
    take(j, "aggregator", s);
    c.aggregator = parse_aggregator(s);
  }
  take(j, "layers", c.layers);
  take(j, "d", c.d);
  take(j, "d_time", c.d_time);
  take(j, "token_mixing", c.token_mixing);
  if (j.contains("decoder")) {
    take(j, "decoder", s);
    c.decoder = parse_decoder(s);
  }
  take(j, "sampler_d_feat", c.sampler_d_feat);
  take(j, "sampler_d_time", c.sampler_d_time);
  take(j, "sampler_d_freq", c.sampler_d_freq);
  take(j, "sampler_d_att", c.sampler_d_att);
  take(j, "attention_on_mixer", c.attention_on_mixer);
  if (j.contains("tgat_loss")) {
    take(j, "tgat_loss", s);
    if (s == "chain") c.tgat_loss = TgatLossForm::chain;
    else if (s == "printed") c.tgat_loss = TgatLossForm::printed;
    else throw ConfigError("unknown tgat_loss '" + s + "' (chain, printed)");
  }
  take(j, "m", c.m);
  take(j, "n", c.n);
  take(j, "batch", c.batch);
  take(j, "epochs", c.epochs);
  take(j, "max_iterations_per_epoch", c.max_iterations_per_epoch);
  take(j, "lr", c.lr);
  take(j, "sampler_lr", c.sampler_lr);
  take(j, "gamma", c.gamma);
  take(j, "epsilon", c.epsilon);
  take(j, "cache_fraction", c.cache_fraction);
  take(j, "seeds", c.seeds);
  if (j.contains("seed")) {
    std::uint64_t one = 0;
    take(j, "seed", one);
    c.seeds = {one};
  }
  take(j, "adaptive_minibatch", c.adaptive_minibatch);
  take(j, "adaptive_neighbor", c.adaptive_neighbor);
  take(j, "finder", c.finder);
  take(j, "eval_negatives", c.eval_negatives);
  take(j, "eval_batch", c.eval_batch);
  take(j, "eval_max_edges", c.eval_max_edges);
  take(j, "eval_every", c.eval_every);
  take(j, "deterministic", c.deterministic);
  take(j, "workers", c.workers);
  if (j.contains("precision")) {
    take(j, "precision", s);
    if (s == "f32") c.precision = Precision::f32;
    else if (s == "f64") c.precision = Precision::f64;
    else throw ConfigError("unknown precision '" + s + "' (f32, f64)");
  }
  if (j.contains("output")) {
    take(j, "output", s);
    c.output = s;
  }
  take(j, "checkpoints", c.checkpoints);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig c = run_config_from_json(j);
  if (!c.dataset.empty() && c.dataset.is_relative()) c.dataset = path.parent_path() / c.dataset;
  return c;
}

void apply_env_overrides(RunConfig& c) {
  auto parse = [](const char* name, const char* v) {
    char* end = nullptr;
    const unsigned long long x = std::strtoull(v, &end, 10);
    if (!*v || *end) throw ConfigError(std::string(name) + " must be a non-negative integer, got '" + v + "'");
    return static_cast<std::uint64_t>(x);
  };
  if (const char* v = std::getenv("CTDG_SEED")) c.seeds = {parse("CTDG_SEED", v)};
  if (const char* v = std::getenv("CTDG_WORKERS")) c.workers = static_cast<std::size_t>(parse("CTDG_WORKERS", v));
}

}  // namespace ctdg
