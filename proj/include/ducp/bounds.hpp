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
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ducp::bounds {

/// Beta(a, n - a).
struct BetaSpec {
  double a = 1.0;
  double n = 2.0;

  void validate() const;
  double alpha() const { return a; }
  double beta() const { return n - a; }
  /// Log density at x where the caller supplies both x and 1 - x (avoids cancellation near 1).
  double log_density(double x, double one_minus_x) const;
  double log_density_from_logs(double log_x, double log_one_minus_x) const;
};

struct GapBoundReport {
  double bound_value = 0.0;
  double coverage_lower_bound = 0.0;
};

/// Lanczos (g = 7, 9 terms) with reflection below 0.5.
double log_gamma(double x);
double log_beta_fn(double m, double n);

/// Closed-form Hellinger distance between Beta laws sharing n.
double hellinger_beta(const BetaSpec& p, const BetaSpec& q);

/// Adaptive Simpson on [a, b]; throws NumericError if a panel cannot reach its tolerance.
double integrate(const std::function<double(double)>& f, double a, double b, double tol, int panels = 16);

/// 0.5 * integral |f_p - f_q| over [0, 1].
double tv_numeric(const BetaSpec& p, const BetaSpec& q, double tol = 1e-8);
/// sqrt(0.5 * integral (sqrt f_p - sqrt f_q)^2).
double hellinger_numeric(const BetaSpec& p, const BetaSpec& q, double tol = 1e-12);

double changepoint_gap_bound(double rho, long long k);
/// sqrt(2 - 2 (1 - 2k/(n+k))^(k/2)); requires n > k >= 0.
double beta_gap_bound(double n, double k);

struct LemmaCheck {
  double lhs = 0.0;
  bool holds = true;
};

/// sum_k w_k 1(sum_i w_i 1(t_i >= t_k) <= alpha) <= alpha, evaluated by brute force.
LemmaCheck weight_sum_lemma_check(double alpha, std::span<const double> weights, std::span<const double> scores);

/// Total variation between 64-bin histograms of two samples on [0, 1].
double histogram_tv(std::span<const double> a, std::span<const double> b, std::size_t bins = 64);

/// Estimate of sum_i w_i d_TV(S(Z), S(Z^i)). Each calibration point's score law is taken as the histogram of its
/// group; points in the test group contribute 0, other groups are compared against `test_scores`.
double empirical_gap(std::span<const double> scores, std::span<const std::size_t> groups,
                     std::span<const double> weights, std::span<const double> test_scores, std::size_t test_group);

/// max(0, 1 - alpha - gap).
double coverage_lower_bound(double alpha, double gap);
GapBoundReport gap_report(double alpha, double bound);

struct GridRow {
  double n = 0;
  double k = 0;
  double a1 = 0;
  double a2 = 0;
  double tv_numeric = 0;
  double hellinger = 0;
  double beta_bound = 0;
  double changepoint_bound = 0;
  bool holds = true;
};

/// One row per (n, k, a1 = fraction * n) with a2 = a1 + k, or a1 - k when a1 + k would reach n.
std::vector<GridRow> bound_grid(std::span<const double> n_list, std::span<const double> k_list,
                                std::span<const double> a1_fractions, double rho);
std::string grid_to_csv(const std::vector<GridRow>& rows);

}  // namespace ducp::bounds
