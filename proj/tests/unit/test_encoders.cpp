#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <unordered_map>

#include <doctest.h>

#include "ctdg/encoders.hpp"
#include "ctdg/error.hpp"
#include "gradcheck.hpp"

using namespace ctdg;
using namespace ctdg::nn;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {

// A small graph with node and edge features; node 0 talks to 1..5, some twice.
TemporalGraph toy_graph(std::size_t d_v, std::size_t d_e, RngStream& rng) {
  std::vector<RawEvent> rows{{0, 1, 1.0}, {0, 2, 2.0}, {3, 0, 3.0}, {0, 1, 4.0}, {0, 4, 5.0}, {5, 0, 6.0}, {0, 2, 7.0}};
  FeatureStore ef{rows.size(), d_e, {}};
  for (std::size_t i = 0; i < rows.size() * d_e; ++i) ef.data.push_back(static_cast<float>(rng.normal()));
  FeatureStore nf{6, d_v, {}};
  for (std::size_t i = 0; i < 6 * d_v; ++i) nf.data.push_back(static_cast<float>(rng.normal()));
  return build_graph(rows, 6, ef, nf);
}

Neighborhood nbhd_of(const TemporalGraph& g, NodeId v, double t, std::size_t m) { return find_recent(g, {v, t, m}); }

}  // namespace

TEST_CASE("time encoding") {
  for (double v : time_encode(0.0, 6, 2.0, 3.0)) CHECK(v == 1.0);
  const auto te = time_encode(std::numbers::pi, 2, 4.0, 2.0);
  CHECK(te[0] == doctest::Approx(-1.0));
  CHECK(std::abs(te[1]) < 1e-12);
  RngStream rng(2);
  for (int i = 0; i < 200; ++i)
    for (double v : time_encode(rng.uniform() * 1e6, 16, 4.0, 4.0)) CHECK((v >= -1.0 && v <= 1.0));
}

TEST_CASE("frequency encoding") {
  const auto z = freq_encode(0.0, 6);
  for (std::size_t s = 0; s < 6; ++s) CHECK(z[s] == (s % 2 == 0 ? 1.0 : 0.0));
  const auto f = freq_encode(1.0, 2);
  CHECK(f[0] == doctest::Approx(std::cos(1.0 / 10000.0)));
  CHECK(f[1] == doctest::Approx(std::sin(1.0 / 10000.0)));
  for (double fr = 0; fr < 50; fr += 1.0)
    for (double v : freq_encode(fr, 10)) CHECK((v >= -1.0 && v <= 1.0));
}

TEST_CASE("identity encoding and frequencies") {
  std::vector<NodeId> aba{7, 3, 7};
  CHECK(identity_encode(aba) == std::vector<std::uint8_t>{1, 0, 1, 0, 1, 0, 1, 0, 1});
  CHECK(compute_frequencies(aba) == std::vector<std::uint32_t>{2, 1, 2});
  std::vector<NodeId> distinct{1, 2, 3};
  CHECK(identity_encode(distinct) == std::vector<std::uint8_t>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  std::vector<NodeId> same{4, 4};
  CHECK(identity_encode(same) == std::vector<std::uint8_t>{1, 1, 1, 1});
  CHECK(compute_frequencies(std::vector<NodeId>{}).empty());

  RngStream rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<NodeId> list(rng.below(30));
    for (auto& u : list) u = static_cast<NodeId>(rng.below(8));
    std::unordered_map<NodeId, std::uint32_t> oracle;
    for (auto u : list) oracle[u]++;
    const auto f = compute_frequencies(list);
    for (std::size_t j = 0; j < list.size(); ++j) REQUIRE(f[j] == oracle[list[j]]);
  }
}

TEST_CASE("feature projection") {
  ParamStore<double> ps;
  RngStream init(1);
  EncoderConfig cfg;
  cfg.d_feat = 4;
  NeighborEncoder<double> enc(cfg, 3, 2, ps, init);
  SUBCASE("zero input and zero bias give zero") {
    Tape<double> t;
    auto h = t.value(enc.project_node(t, ps, t.constant(Tensor<double>({2, 3}))));
    for (double v : h.data) CHECK(v == 0.0);
  }
  SUBCASE("width mismatch") {
    Tape<double> t;
    CHECK_THROWS_AS(enc.project_node(t, ps, t.constant(Tensor<double>({2, 4}))), DimensionError);
  }
  SUBCASE("finite differences") {
    RngStream rng(4);
    auto r = gradcheck([&](auto& t, auto& p, auto& v) {
      return t.sum(t.mul(enc.project_edge(t, p, v[0]), enc.project_node(t, p, v[1])));
    }, ps, {random_tensor<double>({3, 2}, rng), random_tensor<double>({3, 3}, rng)});
    INFO(r.where);
    CHECK(r.ok());
  }
  SUBCASE("absent node features consume no parameters") {
    ParamStore<double> ps2;
    NeighborEncoder<double> e2(cfg, 0, 2, ps2, init);
    CHECK(ps2.size() == 2);
    CHECK(e2.proj_v() == 0);
  }
}

TEST_CASE("neighbor embedding layout") {
  RngStream rng(5);
  auto g = toy_graph(3, 2, rng);
  EncoderConfig cfg;
  cfg.d_feat = 4;
  cfg.d_time = 5;
  cfg.d_freq = 6;
  cfg.m = 8;
  ParamStore<double> ps;
  RngStream init(1);
  NeighborEncoder<double> enc(cfg, 3, 2, ps, init);
  CHECK(enc.d_enc() == 4 + 4 + 5 + 6 + 8);
  CHECK(enc.d_target() == 4 + 5 + 6);

  std::vector<Neighborhood> nb{nbhd_of(g, 0, 100.0, 8), Neighborhood{}, nbhd_of(g, 3, 3.5, 8)};
  std::vector<double> times{100.0, 100.0, 3.0};
  Tape<double> t;
  auto e = enc.build_neighbor_embedding(t, ps, g, times, nb);
  const auto& z = t.value(e.z);
  CHECK(z.shape == Shape{3, 8, enc.d_enc()});
  CHECK(e.valid == std::vector<std::size_t>{7, 0, 1});
  const std::size_t D = enc.d_enc();
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t j = 0; j < 8; ++j) {
      const bool valid = j < e.valid[r];
      CHECK(e.mask[r * 8 + j] == valid);
      const double* row = z.data.data() + (r * 8 + j) * D;
      if (!valid) {
        for (std::size_t c = 0; c < D; ++c) REQUIRE(row[c] == 0.0);
        continue;
      }
      const double* te = row + 8;
      const double* fe = te + 5;
      const double* ie = fe + 6;
      for (std::size_t c = 0; c < 11; ++c) CHECK((te[c] >= -1.0 && te[c] <= 1.0));
      CHECK(ie[j] == 1.0);
      for (std::size_t c = 0; c < 8; ++c) CHECK((ie[c] == 0.0 || ie[c] == 1.0));
    }
  }
  // Node 3 at t=3: its one neighbor (eid 2) at dt=0, freq 1.
  const double* row = z.data.data() + 2 * 8 * D;
  for (std::size_t c = 0; c < 5; ++c) CHECK(row[8 + c] == doctest::Approx(1.0));
  const auto fe1 = freq_encode(1.0, 6);
  for (std::size_t c = 0; c < 6; ++c) CHECK(row[13 + c] == doctest::Approx(fe1[c]));
  CHECK(row[19] == 1.0);
  for (std::size_t c = 20; c < D; ++c) CHECK(row[c] == 0.0);

  // Node 0's list holds node 1 and node 2 twice each.
  const auto& n0 = nb[0];
  const auto freq = compute_frequencies(n0.nbr);
  for (std::size_t j = 0; j < n0.size(); ++j) {
    const auto want = freq_encode(double(freq[j]), 6);
    for (std::size_t c = 0; c < 6; ++c) CHECK(z[j * D + 13 + c] == doctest::Approx(want[c]));
  }
}

TEST_CASE("d_enc matches the concatenated width over a config sweep") {
  RngStream rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t dv = rng.below(3), de = rng.below(3);
    auto g = toy_graph(dv, de, rng);
    EncoderConfig cfg;
    cfg.d_feat = 1 + rng.below(5);
    cfg.d_time = 1 + rng.below(5);
    cfg.d_freq = 1 + rng.below(5);
    cfg.m = 1 + rng.below(9);
    ParamStore<double> ps;
    NeighborEncoder<double> enc(cfg, dv, de, ps, rng);
    const std::size_t want = (dv ? cfg.d_feat : 0) + (de ? cfg.d_feat : 0) + cfg.d_time + cfg.d_freq + cfg.m;
    CHECK(enc.d_enc() == want);
    Tape<double> t;
    std::vector<Neighborhood> nb{nbhd_of(g, 0, 100.0, cfg.m)};
    std::vector<double> times{100.0};
    CHECK(t.shape(enc.build_neighbor_embedding(t, ps, g, times, nb).z) == Shape{1, cfg.m, want});
    std::vector<NodeId> tg{0};
    CHECK(t.shape(enc.build_target_embedding(t, ps, g, tg)) ==
          Shape{1, (dv ? cfg.d_feat : 0) + cfg.d_time + cfg.d_freq});
  }
}

TEST_CASE("target embedding") {
  RngStream rng(7);
  auto g = toy_graph(0, 0, rng);
  EncoderConfig cfg;
  cfg.d_time = 3;
  cfg.d_freq = 4;
  ParamStore<double> ps;
  NeighborEncoder<double> enc(cfg, 0, 0, ps, rng);
  Tape<double> t;
  std::vector<NodeId> tg{0, 5};
  const auto& z = t.value(enc.build_target_embedding(t, ps, g, tg));
  const auto fe = freq_encode(1.0, 4);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 3; ++c) CHECK(z[r * 7 + c] == 1.0);
    for (std::size_t c = 0; c < 4; ++c) CHECK(z[r * 7 + 3 + c] == doctest::Approx(fe[c]));
  }
}

TEST_CASE("permuting the neighbor list permutes rows and conjugates the identity block") {
  RngStream rng(8);
  auto g = toy_graph(2, 3, rng);
  EncoderConfig cfg;
  cfg.d_feat = 3;
  cfg.d_time = 4;
  cfg.d_freq = 4;
  cfg.m = 7;
  ParamStore<double> ps;
  NeighborEncoder<double> enc(cfg, 2, 3, ps, rng);
  const auto base = nbhd_of(g, 0, 100.0, 7);
  const std::size_t k = base.size(), D = enc.d_enc(), off = D - cfg.m;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = k; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    Neighborhood p;
    for (auto i : perm) {
      p.nbr.push_back(base.nbr[i]);
      p.ts.push_back(base.ts[i]);
      p.eid.push_back(base.eid[i]);
    }
    Tape<double> t;
    std::vector<double> times{100.0, 100.0};
    std::vector<Neighborhood> nb{base, p};
    const auto& z = t.value(enc.build_neighbor_embedding(t, ps, g, times, nb).z);
    const double* a = z.data.data();
    const double* b = a + cfg.m * D;
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t c = 0; c < off; ++c) REQUIRE(b[j * D + c] == doctest::Approx(a[perm[j] * D + c]));
      for (std::size_t i = 0; i < k; ++i) REQUIRE(b[j * D + off + i] == a[perm[j] * D + off + perm[i]]);
    }
  }
}

TEST_CASE("padded rows receive no gradient") {
  RngStream rng(10);
  auto g = toy_graph(2, 2, rng);
  EncoderConfig cfg;
  cfg.m = 10;
  ParamStore<double> ps;
  NeighborEncoder<double> enc(cfg, 2, 2, ps, rng);
  Tape<double> t;
  std::vector<double> times{3.5};
  std::vector<Neighborhood> nb{nbhd_of(g, 0, 3.5, 10)};
  auto e = enc.build_neighbor_embedding(t, ps, g, times, nb);
  // Weighting only padded rows must leave every parameter gradient at zero.
  Tensor<double> w(t.shape(e.z), 0.0);
  const std::size_t D = enc.d_enc();
  for (std::size_t j = e.valid[0]; j < cfg.m; ++j)
    for (std::size_t c = 0; c < D; ++c) w[j * D + c] = 1.0 + rng.normal();
  t.backward(t.sum(t.mul(e.z, t.constant(w))));
  for (std::size_t p = 0; p < ps.size(); ++p)
    for (double v : ps.grad(p).data) CHECK(v == 0.0);
}
