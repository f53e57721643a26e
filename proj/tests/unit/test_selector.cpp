#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>
#include <doctest.h>

#include "ctdg/error.hpp"
#include "ctdg/selector.hpp"

using namespace ctdg;

namespace {

double chi_square_threshold(std::size_t dof, double alpha = 1e-3) {
  return boost::math::quantile(boost::math::chi_squared(static_cast<double>(dof)), 1.0 - alpha);
}

}  // namespace

TEST_CASE("initial scores") {
  MinibatchSelector s({10, 20}, 0.1);
  for (double v : s.scores()) CHECK(v == doctest::Approx(0.6));
  MinibatchSelector z({0, 3}, 0.0);
  for (double v : z.scores()) CHECK(v == 0.5);
  CHECK_THROWS_AS(MinibatchSelector({4, 4}, 0.1), ConfigError);
  CHECK_THROWS_AS(MinibatchSelector({0, 4}, -1.0), ConfigError);
}

TEST_CASE("batch selection basics") {
  RngStream rng(1);
  MinibatchSelector s({5, 12}, 0.1);
  auto full = s.select_batch(7, rng);
  CHECK(full == std::vector<EventId>{5, 6, 7, 8, 9, 10, 11});
  MinibatchSelector one({3, 4}, 0.1);
  CHECK(one.select_batch(1, rng) == std::vector<EventId>{3});
  CHECK_THROWS_AS(s.select_batch(8, rng), ConfigError);
  for (int i = 0; i < 200; ++i) {
    auto b = s.select_batch(3, rng);
    CHECK(b.size() == 3);
    CHECK(std::is_sorted(b.begin(), b.end()));
    CHECK(std::adjacent_find(b.begin(), b.end()) == b.end());
    for (auto e : b) CHECK((e >= 5 && e < 12));
  }
  RngStream a(9), c(9);
  CHECK(s.select_batch(4, a) == s.select_batch(4, c));
}

TEST_CASE("a dominant weight is selected proportionally") {
  RngStream rng(2);
  MinibatchSelector s({0, 3}, 0.0);
  const double eps = 1e-3;
  std::vector<EventId> b{0, 1, 2};
  // logits giving scores [1 - tiny, eps, eps]
  const double lo = std::log(eps / (1 - eps));
  std::vector<double> logits{40.0, lo, lo};
  s.update_scores(b, logits);
  const double total = s.scores()[0] + 2 * eps;
  const int N = 200000;
  int zero = 0;
  for (int i = 0; i < N; ++i) zero += s.select_batch(1, rng)[0] == 0;
  const double p = s.scores()[0] / total;
  CHECK(std::abs(zero / double(N) - p) <= 3 * std::sqrt(p * (1 - p) / N));
}

TEST_CASE("score updates follow the sigmoid formula") {
  MinibatchSelector s({100, 150}, 0.1);
  std::vector<EventId> b{100, 149};
  s.update_scores(b, std::vector<double>{0.0, 1e6});
  CHECK(s.score(100) == doctest::Approx(0.6));
  CHECK(s.score(149) == doctest::Approx(1.1));
  s.update_scores(b, std::vector<double>{-1e6, -30.0});
  CHECK(s.score(100) == doctest::Approx(0.1));
  CHECK(s.score(149) > 0.1);
  CHECK(s.score(120) == doctest::Approx(0.6));
  const std::vector<EventId> out{99};
  CHECK_THROWS_AS(s.update_scores(out, std::vector<double>{0.0}), IndexError);

  RngStream rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const EventId e = static_cast<EventId>(100 + rng.below(50));
    const double y = 20.0 * rng.normal();
    const std::vector<EventId> one{e};
    s.update_scores(one, std::vector<double>{y});
    REQUIRE(s.score(e) == 1.0 / (1.0 + std::exp(-y)) + 0.1);
    REQUIRE(s.score(e) >= 0.1);  // sigmoid below 1e-17 rounds onto gamma
    REQUIRE(s.score(e) <= 1.1);
  }
}

TEST_CASE("larger gamma flattens the score ratio") {
  RngStream rng(4);
  std::vector<double> logits(30);
  for (auto& y : logits) y = 3.0 * rng.normal();
  std::vector<EventId> all(30);
  std::iota(all.begin(), all.end(), 0u);
  double prev = std::numeric_limits<double>::infinity();
  for (double gamma : {0.0, 0.05, 0.1, 0.5, 2.0}) {
    MinibatchSelector s({0, 30}, gamma);
    s.update_scores(all, logits);
    const auto [mn, mx] = std::minmax_element(s.scores().begin(), s.scores().end());
    const double ratio = *mx / *mn;
    CHECK(ratio < prev);
    prev = ratio;
  }
}

TEST_CASE("inclusion probabilities") {
  std::vector<double> w{1, 1, 1, 1};
  for (double p : inclusion_probabilities(w, 2)) CHECK(p == doctest::Approx(0.5));
  std::vector<double> skew{100, 1, 1, 1, 1};
  auto pi = inclusion_probabilities(skew, 3);
  CHECK(pi[0] == 1.0);
  for (std::size_t i = 1; i < 5; ++i) CHECK(pi[i] == doctest::Approx(0.5));
  RngStream rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> r(1 + rng.below(40));
    for (auto& v : r) v = std::exp(2.0 * rng.normal());
    const std::size_t b = 1 + rng.below(r.size());
    auto q = inclusion_probabilities(r, b);
    CHECK(std::accumulate(q.begin(), q.end(), 0.0) == doctest::Approx(double(b)));
    for (double v : q) CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("frozen-score selection frequencies match inclusion probabilities") {
  RngStream rng(6);
  const std::size_t K = 12;
  MinibatchSelector s({0, K}, 0.1);
  std::vector<EventId> all(K);
  std::iota(all.begin(), all.end(), 0u);
  std::vector<double> logits(K);
  for (auto& y : logits) y = 2.0 * rng.normal();
  s.update_scores(all, logits);
  for (std::size_t b : {1u, 4u}) {
    const auto pi = inclusion_probabilities(s.scores(), b);
    const int T = 20000;
    std::vector<double> hits(K);
    for (int i = 0; i < T; ++i)
      for (auto e : s.select_batch(b, rng)) hits[e] += 1;
    double x2 = 0.0;
    for (std::size_t i = 0; i < K; ++i) x2 += std::pow(hits[i] - T * pi[i], 2) / (T * pi[i]);
    INFO("b=" << b << " X2=" << x2);
    CHECK(x2 < chi_square_threshold(K - 1));
  }
}

TEST_CASE("chronological batches") {
  MinibatchSelector s({10, 25}, 0.1);
  CHECK(s.iterations_per_epoch(4) == 4);
  CHECK(s.chronological_batch(0, 4) == std::vector<EventId>{10, 11, 12, 13});
  CHECK(s.chronological_batch(3, 4) == std::vector<EventId>{22, 23, 24});
  CHECK_THROWS_AS(s.chronological_batch(4, 4), RangeError);
  CHECK(parse_selection_mode("chronological") == SelectionMode::chronological);
  CHECK_THROWS_AS(parse_selection_mode("x"), ConfigError);
}
