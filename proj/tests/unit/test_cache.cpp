#include <algorithm>
#include <thread>

#include <doctest.h>

#include "ctdg/cache.hpp"
#include "ctdg/error.hpp"

using namespace ctdg;

namespace {

CacheConfig cfg_k(std::size_t k, std::int64_t eps = -1) {
  CacheConfig c;
  c.k = k;
  c.epsilon = eps;
  return c;
}

AccessTrace random_trace(std::size_t epochs, std::size_t per_epoch, std::size_t edges, RngStream& rng) {
  AccessTrace t(epochs);
  ZipfSampler z(edges, 0.8 + rng.uniform(), rng.next_u64());
  for (auto& e : t)
    for (std::size_t i = 0; i < per_epoch; ++i) e.push_back(z(rng));
  return t;
}

}  // namespace

TEST_CASE("lookup") {
  FeatureStore fs{4, 2, {0, 1, 10, 11, 20, 21, 30, 31}};
  FeatureCache c(4, cfg_k(2), &fs);
  std::vector<float> out;
  std::vector<EventId> req{1, 1, 3};
  auto hit = c.lookup(req, &out);
  CHECK(hit == std::vector<std::uint8_t>{0, 0, 0});
  CHECK(out == std::vector<float>{10, 11, 10, 11, 30, 31});
  CHECK(c.counter(1) == 2);
  CHECK(c.counter(3) == 1);
  CHECK(c.current().misses == 3);
  std::vector<EventId> bad{4};
  CHECK_THROWS_AS(c.lookup(bad), IndexError);
}

TEST_CASE("replacement") {
  FeatureCache c(4, cfg_k(2, 1));
  std::vector<EventId> req{1, 1, 1, 1, 1, 2, 2, 2, 3};
  c.lookup(req);
  CHECK(c.top_k() == std::vector<EventId>{1, 2});
  CHECK(c.maybe_replace());
  CHECK(c.resident_set() == std::vector<EventId>{1, 2});
  CHECK(c.counter(1) == 0);
  c.lookup(req);
  CHECK(c.current().hits == 8);
  CHECK_FALSE(c.maybe_replace());
  CHECK(c.resident_set() == std::vector<EventId>{1, 2});
}

TEST_CASE("ties at the k-th slot go to the lower eid") {
  RngStream rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t N = 20, k = 1 + rng.below(6);
    std::vector<std::uint32_t> count(N);
    for (auto& v : count) v = static_cast<std::uint32_t>(rng.below(3));
    std::vector<EventId> req;
    for (EventId e = 0; e < N; ++e)
      for (std::uint32_t i = 0; i < count[e]; ++i) req.push_back(e);
    std::reverse(req.begin(), req.end());
    FeatureCache c(N, cfg_k(k));
    c.lookup(req);
    // enumeration oracle: sort every touched eid by (count desc, eid asc)
    std::vector<EventId> ids;
    for (EventId e = 0; e < N; ++e)
      if (count[e]) ids.push_back(e);
    std::stable_sort(ids.begin(), ids.end(), [&](EventId a, EventId b) { return count[a] > count[b]; });
    ids.resize(std::min(k, ids.size()));
    CHECK(c.top_k() == ids);
  }
}

TEST_CASE("conservation, residency bound, oracle dominance") {
  RngStream rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t N = 50 + rng.below(200), k = rng.below(N / 2);
    auto trace = random_trace(1 + rng.below(5), rng.below(400), N, rng);
    FeatureCache c(N, cfg_k(k));
    std::vector<CacheEpoch> mine;
    for (const auto& ep : trace) {
      c.lookup(ep);
      CHECK(c.current().requests() == ep.size());
      c.maybe_replace();
      CHECK(c.resident_set().size() <= k);
    }
    const auto orc = oracle_cache(trace, N, k);
    for (std::size_t i = 0; i < trace.size(); ++i) CHECK(orc[i].hits >= c.epochs()[i].hits);
  }
}

TEST_CASE("oracle limits and monotonicity in k") {
  RngStream rng(3);
  auto trace = random_trace(3, 500, 100, rng);
  for (const auto& e : oracle_cache(trace, 100, 100)) CHECK(e.hit_rate() == 1.0);
  for (const auto& e : oracle_cache(trace, 100, 0)) CHECK(e.hit_rate() == 0.0);
  std::vector<double> prev(3, 0.0);
  for (std::size_t k = 0; k <= 100; k += 5) {
    auto r = oracle_cache(trace, 100, k);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(r[i].hit_rate() >= prev[i]);
      prev[i] = r[i].hit_rate();
    }
  }
}

TEST_CASE("a repeated epoch is cached as well as the oracle from epoch two") {
  RngStream rng(4);
  auto one = random_trace(1, 5000, 1000, rng)[0];
  AccessTrace trace;
  for (int e = 0; e < 4; ++e) {
    auto copy = one;
    for (std::size_t i = copy.size(); i > 1; --i) std::swap(copy[i - 1], copy[rng.below(i)]);
    trace.push_back(copy);
  }
  const auto sim = simulate_cache(trace, 1000, cfg_k(100));
  const auto orc = oracle_cache(trace, 1000, 100);
  CHECK(sim[0].hits == 0);
  for (std::size_t i = 1; i < 4; ++i) CHECK(sim[i].hits == orc[i].hits);
}

TEST_CASE("cumulative counters persist across epochs") {
  CacheConfig c = cfg_k(1);
  c.cumulative = true;
  FeatureCache f(3, c);
  std::vector<EventId> a{0, 0}, b{1};
  f.lookup(a);
  f.maybe_replace();
  f.lookup(b);
  CHECK(f.counter(0) == 2);
  CHECK(f.counter(1) == 1);
}

TEST_CASE("concurrent lookups count every request") {
  FeatureCache c(100, cfg_k(10));
  std::vector<std::thread> ts;
  for (int w = 0; w < 4; ++w)
    ts.emplace_back([&, w] {
      RngStream rng(10 + w);
      for (int i = 0; i < 500; ++i) {
        std::vector<EventId> req{static_cast<EventId>(rng.below(100)), static_cast<EventId>(rng.below(100))};
        c.lookup(req);
      }
    });
  for (auto& t : ts) t.join();
  CHECK(c.current().requests() == 4000);
  std::uint64_t total = 0;
  for (EventId e = 0; e < 100; ++e) total += c.counter(e);
  CHECK(total == 4000);
}

TEST_CASE("cache report") {
  CacheEpoch empty;
  auto j = cache_report({empty}, {empty}, cfg_k(10), 0);
  CHECK(j["epochs"][0]["hit_rate"] == 0.0);
  CHECK(j["epochs"][0]["zero_requests"] == true);
  CHECK(j["epsilon"] == 9);
  auto back = nlohmann::json::parse(j.dump());
  CHECK(back == j);
}
