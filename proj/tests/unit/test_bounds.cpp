/*
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#include <doctest.h>

#include <cmath>

#include "ducp/bounds.hpp"
#include "ducp/error.hpp"
#include "ducp/rng.hpp"

using namespace ducp;
using namespace ducp::bounds;

TEST_CASE("log_gamma against std::lgamma") {
  RngStream rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double x = std::exp(-6.0 + 12.0 * rng.uniform());
    const double want = std::lgamma(x);
    CHECK(std::abs(log_gamma(x) - want) <= 1e-12 * std::max(1.0, std::abs(want)));
  }
  CHECK_THROWS_AS(log_gamma(0.0), DomainError);
}

TEST_CASE("log_beta_fn") {
  CHECK(std::abs(log_beta_fn(1, 1)) < 1e-14);
  CHECK(std::abs(log_beta_fn(2, 2) - std::log(1.0 / 6.0)) < 1e-14);
  // High-precision references.
  CHECK(std::abs(std::exp(log_beta_fn(2.5, 1.5)) - 0.19634954084936207740) < 1e-14);
  CHECK(std::abs(log_beta_fn(2.5, 1.5) / -1.6278588363903810635 - 1.0) < 1e-10);
  CHECK(std::abs(log_beta_fn(0.3, 7.2) / 0.51828183794768259237 - 1.0) < 1e-10);
  CHECK(std::abs(log_beta_fn(150.5, 49.5) / -112.80243213412604226 - 1.0) < 1e-10);
  CHECK_THROWS_AS(log_beta_fn(0.0, 1.0), DomainError);
  CHECK_THROWS_AS(log_beta_fn(1.0, -2.0), DomainError);
}

TEST_CASE("hellinger_beta") {
  const BetaSpec p{2, 4}, q{3, 4};
  CHECK(hellinger_beta(p, p) == 0.0);
  CHECK(std::abs(hellinger_beta(p, q) - 0.40860671689939989126) < 1e-12);
  CHECK_THROWS_AS(hellinger_beta(p, BetaSpec{2, 5}), ParameterError);
  CHECK_THROWS_AS(hellinger_beta(p, BetaSpec{5, 4}), DomainError);
  RngStream rng(2);
  for (int i = 0; i < 100; ++i) {
    const double n = 1.0 + 100.0 * rng.uniform();
    const BetaSpec a{n * rng.uniform_open(), n}, b{n * rng.uniform_open(), n};
    CHECK(hellinger_beta(a, b) == hellinger_beta(b, a));
    CHECK(hellinger_beta(a, b) <= 1.0);
  }
}

TEST_CASE("integrate") {
  CHECK(std::abs(integrate([](double x) { return std::sin(x); }, 0.0, M_PI, 1e-12) - 2.0) < 1e-11);
  CHECK(std::abs(integrate([](double x) { return std::abs(x - 0.3); }, 0.0, 1.0, 1e-12) - 0.29) < 1e-11);
  CHECK_THROWS_AS(integrate([](double x) { return 1.0 / x; }, 0.0, 1.0, 1e-8), NumericError);
}

TEST_CASE("tv_numeric") {
  const BetaSpec p{2, 4};
  CHECK(tv_numeric(p, p) < 1e-8);
  CHECK(std::abs(tv_numeric(BetaSpec{1, 2}, BetaSpec{2, 3}) - 0.25) < 1e-8);
  CHECK(std::abs(tv_numeric(p, BetaSpec{3, 4}) - 4.0 / 9.0) < 1e-8);
  // Unbounded densities at both endpoints.
  const double tv = tv_numeric(BetaSpec{0.5, 1.0}, BetaSpec{0.3, 0.9});
  CHECK(tv >= 0.0);
  CHECK(tv <= 1.0);
}

TEST_CASE("hellinger_numeric matches the closed form") {
  CHECK(hellinger_numeric(BetaSpec{2, 4}, BetaSpec{2, 4}) < 1e-6);
  CHECK(std::abs(hellinger_numeric(BetaSpec{2, 4}, BetaSpec{3, 4}) - 0.40860671689939989126) < 1e-6);
  CHECK(std::abs(hellinger_numeric(BetaSpec{0.5, 2.5}, BetaSpec{1.5, 2.5}) - 0.54119610014619698440) < 1e-6);
  RngStream rng(3);
  for (int i = 0; i < 100; ++i) {
    const double n = 1.0 + 200.0 * rng.uniform();
    const BetaSpec a{n * rng.uniform_open(), n}, b{n * rng.uniform_open(), n};
    const double h = hellinger_beta(a, b);
    CHECK(std::abs(hellinger_numeric(a, b) - h) < 1e-6);
    CHECK(tv_numeric(a, b) <= std::sqrt(2.0) * h + 1e-8);
  }
}

TEST_CASE("changepoint_gap_bound") {
  CHECK(changepoint_gap_bound(0.7, 0) == 1.0);
  CHECK(changepoint_gap_bound(0.5, 3) == 0.125);
  CHECK(changepoint_gap_bound(1.0, 50) == 1.0);
  CHECK_THROWS_AS(changepoint_gap_bound(0.0, 1), ParameterError);
}

TEST_CASE("beta_gap_bound") {
  CHECK(beta_gap_bound(100, 0) == 0.0);
  CHECK(std::abs(beta_gap_bound(100, 5) - 0.66537462222677738421) < 1e-12);
  double prev = 0.0;
  for (int k = 0; k <= 10; ++k) {
    const double b = beta_gap_bound(100, k);
    CHECK(b >= prev);
    prev = b;
  }
  CHECK_THROWS_AS(beta_gap_bound(5, 5), DomainError);
  for (double n : {100.0, 1000.0}) {
    for (int k = 1; k <= static_cast<int>(std::sqrt(n)); ++k) {
      const double ref = std::sqrt(1.0 - std::exp(-static_cast<double>(k) * k / n));
      const double b = beta_gap_bound(n, k);
      CHECK(b <= 2.0 * ref);
      CHECK(b >= 0.5 * ref);
    }
  }
}

TEST_CASE("beta bound dominates quadrature TV on the grid") {
  const std::vector<double> ns{50, 100, 200}, ks{0, 1, 2, 5, 10}, fr{0.25, 0.5, 0.75};
  const auto rows = bound_grid(ns, ks, fr, 0.99);
  CHECK(rows.size() == 3 * 5 * 3);
  for (const auto& r : rows) {
    CHECK(r.holds);
    CHECK(r.tv_numeric <= r.beta_bound + 1e-8);
    if (r.k == 0) {
      CHECK(r.beta_bound == 0.0);
      CHECK(r.tv_numeric < 1e-8);
    }
  }
  const auto csv = grid_to_csv(rows);
  CHECK(csv.rfind("n,k,a1,a2,tv_numeric,hellinger,beta_bound,changepoint_bound,holds\n", 0) == 0);
  CHECK_THROWS_AS(bound_grid(std::vector<double>{5}, std::vector<double>{5}, fr, 0.9), UsageError);
}

TEST_CASE("grid changepoint column is rho^k") {
  const std::vector<double> ns{50}, ks{0, 1, 2, 3, 4, 5}, fr{0.5};
  const auto rows = bound_grid(ns, ks, fr, 0.5);
  REQUIRE(rows.size() == 6);
  const double expect[] = {1, 0.5, 0.25, 0.125, 0.0625, 0.03125};
  for (std::size_t i = 0; i < 6; ++i) CHECK(rows[i].changepoint_bound == expect[i]);
  CHECK_FALSE(std::signbit(rows[0].hellinger));
}

TEST_CASE("a1 - k cells mirror a1 + k cells of the reflected fraction") {
  for (double n : {50.0, 100.0, 200.0}) {
    for (double k : {1.0, 2.0, 5.0, 10.0}) {
      const double lo = 0.25 * n, hi = 0.75 * n;
      CHECK(std::abs(tv_numeric({lo, n}, {lo - k, n}) - tv_numeric({hi, n}, {hi + k, n})) < 1e-9);
    }
  }
}

TEST_CASE("weight_sum_lemma_check") {
  const std::vector<double> zero(3, 0.0), t{1, 2, 3};
  CHECK(weight_sum_lemma_check(0.1, zero, t).lhs == 0.0);
  const auto r = weight_sum_lemma_check(0.5, std::vector<double>{0.3, 0.3, 0.4}, t);
  CHECK(r.lhs == 0.4);
  CHECK(r.holds);

  RngStream rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(30);
    std::vector<double> w(n), s(n);
    double total = 0.0;
    for (auto& v : w) total += (v = rng.uniform());
    for (auto& v : w) v /= total;
    for (auto& v : s) v = static_cast<double>(rng.below(8));
    CHECK(weight_sum_lemma_check(rng.uniform_open(), w, s).holds);
  }
}

TEST_CASE("histogram_tv and empirical_gap") {
  const std::vector<double> a{0.1, 0.2, 0.3}, b{0.9, 0.95};
  CHECK(histogram_tv(a, a) == 0.0);
  CHECK(histogram_tv(a, b) == 1.0);

  const std::vector<double> scores{0.1, 0.2, 0.9, 0.95};
  const std::vector<std::size_t> groups{0, 0, 1, 1};
  const std::vector<double> w{0.1, 0.2, 0.3, 0.4};
  const std::vector<double> test{0.9, 0.95};
  CHECK(empirical_gap(scores, groups, w, test, 1) == doctest::Approx(0.3));
  CHECK(empirical_gap(scores, std::vector<std::size_t>(4, 1), w, test, 1) == 0.0);
}

TEST_CASE("coverage_lower_bound") {
  CHECK(coverage_lower_bound(0.1, 0.0) == doctest::Approx(0.9));
  CHECK(std::abs(coverage_lower_bound(0.1, std::pow(0.99, 160)) - (0.9 - std::pow(0.99, 160))) < 1e-15);
  CHECK(std::abs(coverage_lower_bound(0.1, std::pow(0.99, 160)) - 0.70) < 0.01);
  CHECK(coverage_lower_bound(0.1, 0.95) == 0.0);
  CHECK(gap_report(0.1, 0.2).coverage_lower_bound == doctest::Approx(0.7));
}
