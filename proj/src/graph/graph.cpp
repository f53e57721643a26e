#include "ctdg/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "ctdg/error.hpp"
#include "ctdg/matrix_io.hpp"

namespace ctdg {

void save_features(const std::filesystem::path& path, const FeatureStore& fs) {
  if (fs.data.size() != fs.rows * fs.cols) throw SchemaError("feature store payload does not match its shape");
  write_matrix(path, fs.rows, fs.cols, fs.data.data());
}

FeatureStore load_features(const std::filesystem::path& path) {
  MatrixFile m = read_matrix(path);
  if (m.type != 1) throw FormatError(path.string() + ": feature files must hold 32-bit floats");
  FeatureStore fs;
  fs.rows = m.rows;
  fs.cols = m.cols;
  fs.data = std::move(m.f32);
  return fs;
}

TemporalGraph build_graph(const std::vector<RawEvent>& rows, std::size_t num_nodes, FeatureStore edge_features,
                          FeatureStore node_features) {
  std::int64_t max_id = -1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.src < 0 || r.dst < 0) throw ValidationError("negative node id in event " + std::to_string(i));
    if (!std::isfinite(r.ts)) throw ValidationError("non-finite timestamp in event " + std::to_string(i));
    if (r.ts < 0) throw ValidationError("negative timestamp in event " + std::to_string(i));
    max_id = std::max({max_id, r.src, r.dst});
  }
  if (rows.size() > std::numeric_limits<EventId>::max()) throw RangeError("too many events");
  const auto inferred = static_cast<std::size_t>(max_id + 1);
  if (num_nodes == 0) num_nodes = std::max(inferred, node_features.rows);
  if (inferred > num_nodes) throw ValidationError("node id " + std::to_string(max_id) + " exceeds num_nodes");
  if (!edge_features.empty() && edge_features.rows != rows.size()) {
    throw SchemaError("edge feature rows (" + std::to_string(edge_features.rows) + ") != events (" +
                      std::to_string(rows.size()) + ")");
  }
  if (!node_features.empty() && node_features.rows != num_nodes) {
    throw SchemaError("node feature rows (" + std::to_string(node_features.rows) + ") != nodes (" +
                      std::to_string(num_nodes) + ")");
  }

  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rows[a].ts < rows[b].ts; });

  TemporalGraph g;
  g.num_nodes = num_nodes;
  g.events.resize(rows.size());
  for (std::size_t e = 0; e < order.size(); ++e) {
    const auto& r = rows[order[e]];
    g.events[e] = Event{static_cast<NodeId>(r.src), static_cast<NodeId>(r.dst), r.ts, static_cast<EventId>(e)};
  }

  if (!edge_features.empty()) {
    FeatureStore ef;
    ef.rows = edge_features.rows;
    ef.cols = edge_features.cols;
    ef.data.resize(ef.rows * ef.cols);
    for (std::size_t e = 0; e < order.size(); ++e) {
      std::copy_n(edge_features.row(order[e]), ef.cols, ef.data.data() + e * ef.cols);
    }
    g.edge_features = std::move(ef);
  } else {
    g.edge_features = FeatureStore{rows.size(), 0, {}};
  }
  g.node_features = node_features.empty() ? FeatureStore{num_nodes, 0, {}} : std::move(node_features);

  // Events are visited in eid order, so each list comes out (ts, eid)-sorted.
  g.offsets.assign(num_nodes + 1, 0);
  // A self loop is listed once so that no neighborhood repeats an eid.
  for (const auto& ev : g.events) {
    ++g.offsets[ev.src + 1];
    if (ev.dst != ev.src) ++g.offsets[ev.dst + 1];
  }
  for (std::size_t v = 0; v < num_nodes; ++v) g.offsets[v + 1] += g.offsets[v];
  const std::size_t total = g.offsets[num_nodes];
  g.adj_nbr.resize(total);
  g.adj_ts.resize(total);
  g.adj_eid.resize(total);
  std::vector<std::size_t> cursor(g.offsets.begin(), g.offsets.end() - 1);
  auto put = [&](NodeId v, NodeId u, const Event& ev) {
    const std::size_t at = cursor[v]++;
    g.adj_nbr[at] = u;
    g.adj_ts[at] = ev.ts;
    g.adj_eid[at] = ev.eid;
  };
  for (const auto& ev : g.events) {
    put(ev.src, ev.dst, ev);
    if (ev.dst != ev.src) put(ev.dst, ev.src, ev);
  }
  return g;
}

namespace {

bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

bool parse_int(std::string_view s, std::int64_t& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t c = line.find(',', start);
    if (c == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, c - start));
    start = c + 1;
  }
}

}  // namespace

TemporalGraph ingest_events(const std::filesystem::path& path, const IngestConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open event file " + path.string());
  std::vector<RawEvent> rows;
  FeatureStore ef;
  long width = cfg.edge_feature_dim;
  std::string line;
  std::size_t lineno = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv(line);
    if (!sv.empty() && sv.back() == '\r') sv.remove_suffix(1);
    if (sv.find_first_not_of(" \t") == std::string_view::npos || sv.front() == '#') continue;
    auto fields = split_commas(sv);
    RawEvent r;
    if (first_content) {
      first_content = false;
      std::int64_t probe = 0;
      if (!parse_int(fields[0], probe) &&
          std::any_of(sv.begin(), sv.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)); })) {
        continue;  // header
      }
    }
    if (fields.size() < 3) throw ParseError(lineno, "expected src,dst,ts[,features], got " + std::to_string(fields.size()) + " fields");
    if (!parse_int(fields[0], r.src)) throw ParseError(lineno, "bad source id '" + std::string(fields[0]) + "'");
    if (!parse_int(fields[1], r.dst)) throw ParseError(lineno, "bad destination id '" + std::string(fields[1]) + "'");
    if (r.src < 0 || r.dst < 0) throw ParseError(lineno, "negative node id");
    if (!parse_double(fields[2], r.ts)) {
      std::string f(fields[2]);
      std::transform(f.begin(), f.end(), f.begin(), ::tolower);
      if (f.find("nan") != std::string::npos || f.find("inf") != std::string::npos) {
        throw ValidationError("line " + std::to_string(lineno) + ": non-finite timestamp");
      }
      throw ParseError(lineno, "bad timestamp '" + std::string(fields[2]) + "'");
    }
    if (!std::isfinite(r.ts)) throw ValidationError("line " + std::to_string(lineno) + ": non-finite timestamp");
    if (r.ts < 0) throw ValidationError("line " + std::to_string(lineno) + ": negative timestamp");
    const long got = static_cast<long>(fields.size()) - 3;
    if (width < 0) width = got;
    if (got != width) {
      throw SchemaError("line " + std::to_string(lineno) + ": " + std::to_string(got) +
                        " edge features, expected " + std::to_string(width));
    }
    for (std::size_t k = 3; k < fields.size(); ++k) {
      double v = 0;
      if (!parse_double(fields[k], v)) throw ParseError(lineno, "bad feature value '" + std::string(fields[k]) + "'");
      ef.data.push_back(static_cast<float>(v));
    }
    rows.push_back(r);
  }
  ef.rows = rows.size();
  ef.cols = width < 0 ? 0 : static_cast<std::size_t>(width);
  if (ef.cols == 0) ef = FeatureStore{rows.size(), 0, {}};
  FeatureStore nf;
  if (cfg.node_features) nf = load_features(*cfg.node_features);
  return build_graph(rows, cfg.num_nodes, std::move(ef), std::move(nf));
}

TemporalGraph load_dataset(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw ConfigError("cannot open dataset manifest " + manifest.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset manifest " + manifest.string() + ": " + e.what());
  }
  const auto base = manifest.parent_path();
  IngestConfig cfg;
  if (!j.contains("events")) throw ConfigError("dataset manifest lacks \"events\"");
  cfg.num_nodes = j.value("num_nodes", std::size_t{0});
  if (j.contains("d_e")) cfg.edge_feature_dim = j["d_e"].get<long>();
  if (j.contains("node_features") && !j["node_features"].is_null()) {
    cfg.node_features = base / j["node_features"].get<std::string>();
  }
  TemporalGraph g = ingest_events(base / j["events"].get<std::string>(), cfg);
  if (j.contains("d_v") && j["d_v"].get<std::size_t>() != g.d_v()) {
    throw SchemaError("manifest declares d_v=" + std::to_string(j["d_v"].get<std::size_t>()) + " but node features have " +
                      std::to_string(g.d_v()) + " columns");
  }
  return g;
}

void save_dataset(const TemporalGraph& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::FILE* f = std::fopen((dir / "events.csv").c_str(), "w");
    if (!f) throw ConfigError("cannot write " + (dir / "events.csv").string());
    for (const auto& ev : g.events) {
      std::fprintf(f, "%u,%u,%.17g", ev.src, ev.dst, ev.ts);
      for (std::size_t k = 0; k < g.d_e(); ++k) std::fprintf(f, ",%.9g", double(g.edge_features.row(ev.eid)[k]));
      std::fputc('\n', f);
    }
    std::fclose(f);
  }
  nlohmann::json j;
  j["events"] = "events.csv";
  j["num_nodes"] = g.num_nodes;
  j["d_e"] = g.d_e();
  j["d_v"] = g.d_v();
  if (!g.node_features.empty()) {
    save_features(dir / "node_features.bin", g.node_features);
    j["node_features"] = "node_features.bin";
  } else {
    j["node_features"] = nullptr;
  }
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << "\n";
}

SplitSpec chronological_split(const TemporalGraph& g, std::array<double, 3> ratios, std::optional<std::size_t> window) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-6 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  const std::size_t E = g.num_events();
  const std::size_t w = window.value_or(E);
  if (w > E) throw RangeError("split window " + std::to_string(w) + " exceeds event count " + std::to_string(E));
  const std::size_t base = E - w;
  auto cut = [&](double frac) {
    return base + std::min(w, static_cast<std::size_t>(std::floor(frac * static_cast<double>(w) + 1e-9)));
  };
  const std::size_t a = cut(ratios[0]);
  const std::size_t b = cut(ratios[0] + ratios[1]);
  return SplitSpec{{base, a}, {a, b}, {b, E}};
}

std::size_t temporal_neighborhood_size(const TemporalGraph& g, NodeId v, double t) {
  if (v >= g.num_nodes) throw IndexError("node " + std::to_string(v) + " out of range");
  const auto ts = g.ts_of(v);
  return static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), t) - ts.begin());
}

void validate_graph(const TemporalGraph& g) {
  if (g.offsets.size() != g.num_nodes + 1 || g.offsets.front() != 0) throw ValidationError("bad offsets array");
  for (std::size_t v = 0; v < g.num_nodes; ++v)
    if (g.offsets[v] > g.offsets[v + 1]) throw ValidationError("offsets decrease at node " + std::to_string(v));
  std::size_t loops = 0;
  for (const auto& ev : g.events) loops += ev.src == ev.dst;
  if (g.offsets.back() != 2 * g.num_events() - loops || g.adj_ts.size() != g.offsets.back()) {
    throw ValidationError("adjacency size does not match the event count");
  }
  for (std::size_t e = 0; e < g.num_events(); ++e) {
    const auto& ev = g.events[e];
    if (ev.eid != e) throw ValidationError("eids are not dense");
    if (!std::isfinite(ev.ts) || ev.ts < 0) throw ValidationError("bad timestamp");
    if (e > 0 && g.events[e - 1].ts > ev.ts) throw ValidationError("events not ts-sorted");
  }
  for (std::size_t v = 0; v < g.num_nodes; ++v) {
    for (std::size_t i = g.offsets[v] + 1; i < g.offsets[v + 1]; ++i) {
      if (g.adj_ts[i - 1] > g.adj_ts[i] || (g.adj_ts[i - 1] == g.adj_ts[i] && g.adj_eid[i - 1] > g.adj_eid[i])) {
        throw ValidationError("adjacency of node " + std::to_string(v) + " is not (ts, eid)-sorted");
      }
    }
  }
}

}  // namespace ctdg
