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
#include "ducp/bounds.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "ducp/error.hpp"
#include "ducp/text.hpp"

namespace ducp::bounds {

namespace {

constexpr std::array<double, 9> kLanczos = {
    0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
    771.32342877765313,   -176.61502916214059,   12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};
constexpr int kMaxDepth = 48;
constexpr double kLemmaTolerance = 1e-12;

double xlogy(double c, double logy) { return c == 0.0 ? 0.0 : c * logy; }

struct Simpson {
  const std::function<double(double)>& f;
  double worst = 0.0;

  double run(double a, double b, double fa, double fm, double fb, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (!std::isfinite(delta)) throw NumericError("integrand is not finite near x = " + format_double(m));
    if (std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    if (depth >= kMaxDepth) {
      worst = std::max(worst, std::abs(delta) / 15.0);
      return left + right + delta / 15.0;
    }
    return run(a, m, fa, flm, fm, left, 0.5 * tol, depth + 1) + run(m, b, fm, frm, fb, right, 0.5 * tol, depth + 1);
  }
};

// Integral over [0, 1] of an integrand given log x, log(1 - x) and the log Jacobian. The interval is split at 1/2
// and mapped x = u^power / 2 on each half so integrable endpoint singularities become bounded; u = 0 contributes 0
// when power > 1.
using LogIntegrand = std::function<double(double, double, double)>;

double integrate_unit(const LogIntegrand& g, int power, double tol) {
  const double p = power;
  const double log_half = std::log(0.5);
  auto half = [&](bool left) {
    return [&, left](double u) {
      if (u <= 0.0 && power > 1) return 0.0;
      const double log_t = log_half + p * std::log(u);
      const double log_rest = std::log1p(-std::exp(log_t));
      const double log_jac = log_half + std::log(p) + xlogy(p - 1.0, std::log(u));
      return left ? g(log_t, log_rest, log_jac) : g(log_rest, log_t, log_jac);
    };
  };
  const std::function<double(double)> lf = half(true), rf = half(false);
  return integrate(lf, 0.0, 1.0, 0.5 * tol) + integrate(rf, 0.0, 1.0, 0.5 * tol);
}

int endpoint_power(const BetaSpec& p, const BetaSpec& q) {
  const double smallest = std::min({p.alpha(), p.beta(), q.alpha(), q.beta()});
  return smallest >= 1.0 ? 1 : static_cast<int>(std::floor(1.0 / smallest)) + 1;
}

}  // namespace

void BetaSpec::validate() const {
  if (!(a > 0.0 && a < n) || !std::isfinite(n)) {
    throw DomainError("Beta spec requires 0 < a < n, got a=" + format_double(a) + " n=" + format_double(n));
  }
}

double BetaSpec::log_density(double x, double one_minus_x) const {
  return log_density_from_logs(std::log(x), std::log(one_minus_x));
}

double BetaSpec::log_density_from_logs(double log_x, double log_one_minus_x) const {
  return xlogy(alpha() - 1.0, log_x) + xlogy(beta() - 1.0, log_one_minus_x) - log_beta_fn(alpha(), beta());
}

double log_gamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("log_gamma requires a finite positive argument");
  if (x < 0.5) return std::log(std::numbers::pi / std::sin(std::numbers::pi * x)) - log_gamma(1.0 - x);
  const double z = x - 1.0;
  double s = kLanczos[0];
  for (std::size_t i = 1; i < kLanczos.size(); ++i) s += kLanczos[i] / (z + static_cast<double>(i));
  const double t = z + 7.5;
  return 0.5 * std::log(2.0 * std::numbers::pi) + (z + 0.5) * std::log(t) - t + std::log(s);
}

double log_beta_fn(double m, double n) {
  if (!(m > 0.0 && n > 0.0)) {
    throw DomainError("log_beta_fn requires positive arguments, got " + format_double(m) + ", " + format_double(n));
  }
  return log_gamma(m) + log_gamma(n) - log_gamma(m + n);
}

double hellinger_beta(const BetaSpec& p, const BetaSpec& q) {
  p.validate();
  q.validate();
  if (p.n != q.n) throw ParameterError("hellinger_beta needs equal n, got " + format_double(p.n) + " and " +
                                       format_double(q.n));
  const double mid = 0.5 * (p.a + q.a);
  const double log_ratio =
      log_beta_fn(mid, p.n - mid) - 0.5 * (log_beta_fn(p.alpha(), p.beta()) + log_beta_fn(q.alpha(), q.beta()));
  const double h2 = -std::expm1(std::min(0.0, log_ratio));
  return h2 > 0.0 ? std::sqrt(std::min(h2, 1.0)) : 0.0;
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol, int panels) {
  if (!(b > a) || panels < 1) throw ParameterError("integrate needs b > a and at least one panel");
  Simpson s{f};
  double total = 0.0;
  const double width = (b - a) / panels;
  double fa = f(a);
  for (int i = 0; i < panels; ++i) {
    const double lo = a + width * i;
    const double hi = i + 1 == panels ? b : a + width * (i + 1);
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid), fb = f(hi);
    const double whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
    total += s.run(lo, hi, fa, fm, fb, whole, tol / panels, 0);
    fa = fb;
  }
  if (s.worst > tol) {
    throw NumericError("quadrature did not converge: achieved error estimate " + format_double(s.worst) +
                       " above tolerance " + format_double(tol));
  }
  return total;
}

double tv_numeric(const BetaSpec& p, const BetaSpec& q, double tol) {
  p.validate();
  q.validate();
  const double bp = log_beta_fn(p.alpha(), p.beta()), bq = log_beta_fn(q.alpha(), q.beta());
  auto g = [&](double lx, double ly, double lj) {
    const double fp = std::exp(xlogy(p.alpha() - 1.0, lx) + xlogy(p.beta() - 1.0, ly) - bp + lj);
    const double fq = std::exp(xlogy(q.alpha() - 1.0, lx) + xlogy(q.beta() - 1.0, ly) - bq + lj);
    return std::abs(fp - fq);
  };
  return std::clamp(0.5 * integrate_unit(g, endpoint_power(p, q), 2.0 * tol), 0.0, 1.0);
}

double hellinger_numeric(const BetaSpec& p, const BetaSpec& q, double tol) {
  p.validate();
  q.validate();
  const double bp = log_beta_fn(p.alpha(), p.beta()), bq = log_beta_fn(q.alpha(), q.beta());
  auto g = [&](double lx, double ly, double lj) {
    const double rp = std::exp(0.5 * (xlogy(p.alpha() - 1.0, lx) + xlogy(p.beta() - 1.0, ly) - bp + lj));
    const double rq = std::exp(0.5 * (xlogy(q.alpha() - 1.0, lx) + xlogy(q.beta() - 1.0, ly) - bq + lj));
    return (rp - rq) * (rp - rq);
  };
  const double h2 = 0.5 * integrate_unit(g, endpoint_power(p, q), 2.0 * tol);
  return std::sqrt(std::clamp(h2, 0.0, 1.0));
}

double changepoint_gap_bound(double rho, long long k) {
  if (!(rho > 0.0 && rho <= 1.0)) throw ParameterError("rho must lie in (0, 1], got " + format_double(rho));
  if (k < 0) throw ParameterError("k must be >= 0");
  return std::pow(rho, static_cast<double>(k));
}

double beta_gap_bound(double n, double k) {
  if (!(k >= 0.0)) throw DomainError("k must be >= 0");
  if (!(n > k)) throw DomainError("beta_gap_bound requires n > k, got n=" + format_double(n) + " k=" + format_double(k));
  const double inner = 0.5 * k * std::log1p(-2.0 * k / (n + k));
  return std::sqrt(-2.0 * std::expm1(inner));
}

LemmaCheck weight_sum_lemma_check(double alpha, std::span<const double> weights, std::span<const double> scores) {
  if (weights.size() != scores.size()) throw DimensionError("weights and scores differ in length");
  for (double w : weights) {
    if (!(w >= 0.0)) throw ParameterError("weights must be non-negative");
  }
  LemmaCheck out;
  long double lhs = 0.0L;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    long double inner = 0.0L;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= scores[k]) inner += weights[i];
    }
    if (inner <= alpha) lhs += weights[k];
  }
  out.lhs = static_cast<double>(lhs);
  out.holds = out.lhs <= alpha + kLemmaTolerance;
  return out;
}

double histogram_tv(std::span<const double> a, std::span<const double> b, std::size_t bins) {
  if (a.empty() || b.empty() || bins == 0) throw UsageError("histogram_tv needs two non-empty samples");
  auto hist = [bins](std::span<const double> s) {
    std::vector<double> h(bins, 0.0);
    for (double v : s) {
      const auto idx = static_cast<std::size_t>(std::clamp(v, 0.0, 1.0) * static_cast<double>(bins));
      h[std::min(idx, bins - 1)] += 1.0 / static_cast<double>(s.size());
    }
    return h;
  };
  const auto ha = hist(a), hb = hist(b);
  double tv = 0.0;
  for (std::size_t i = 0; i < bins; ++i) tv += std::abs(ha[i] - hb[i]);
  return std::min(1.0, 0.5 * tv);
}

double empirical_gap(std::span<const double> scores, std::span<const std::size_t> groups,
                     std::span<const double> weights, std::span<const double> test_scores, std::size_t test_group) {
  if (scores.size() != groups.size() || scores.size() != weights.size()) {
    throw DimensionError("scores, groups and weights must have equal length");
  }
  std::map<std::size_t, std::vector<double>> by_group;
  for (std::size_t i = 0; i < scores.size(); ++i) by_group[groups[i]].push_back(scores[i]);
  std::map<std::size_t, double> tv;
  double gap = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (groups[i] == test_group || weights[i] == 0.0) continue;
    auto it = tv.find(groups[i]);
    if (it == tv.end()) it = tv.emplace(groups[i], histogram_tv(by_group[groups[i]], test_scores)).first;
    gap += weights[i] * it->second;
  }
  return gap;
}

double coverage_lower_bound(double alpha, double gap) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
  if (!(gap >= 0.0)) throw ParameterError("gap must be >= 0");
  return std::clamp(1.0 - alpha - gap, 0.0, 1.0);
}

GapBoundReport gap_report(double alpha, double bound) { return {bound, coverage_lower_bound(alpha, bound)}; }

std::vector<GridRow> bound_grid(std::span<const double> n_list, std::span<const double> k_list,
                                std::span<const double> a1_fractions, double rho) {
  std::vector<GridRow> rows;
  for (double n : n_list) {
    for (double k : k_list) {
      if (!(k >= 0.0) || k != std::floor(k)) throw UsageError("k values must be non-negative integers");
      if (!(n > k)) throw UsageError("grid requires n > k (n=" + format_double(n) + ", k=" + format_double(k) + ")");
      for (double frac : a1_fractions) {
        const double a1 = frac * n;
        if (!(a1 > 0.0 && a1 < n)) throw UsageError("a1 fraction must lie in (0, 1)");
        const double a2 = a1 + k < n ? a1 + k : a1 - k;
        if (!(a2 > 0.0)) continue;
        GridRow r;
        r.n = n;
        r.k = k;
        r.a1 = a1;
        r.a2 = a2;
        const BetaSpec p{a1, n}, q{a2, n};
        r.tv_numeric = tv_numeric(p, q);
        r.hellinger = hellinger_beta(p, q);
        r.beta_bound = beta_gap_bound(n, k);
        r.changepoint_bound = changepoint_gap_bound(rho, static_cast<long long>(k));
        r.holds = r.tv_numeric <= r.beta_bound + 1e-8 && r.tv_numeric <= std::sqrt(2.0) * r.hellinger + 1e-8;
        rows.push_back(r);
      }
    }
  }
  return rows;
}

std::string grid_to_csv(const std::vector<GridRow>& rows) {
  std::ostringstream os;
  os << "n,k,a1,a2,tv_numeric,hellinger,beta_bound,changepoint_bound,holds\n";
  for (const auto& r : rows) {
    os << format_double(r.n) << ',' << format_double(r.k) << ',' << format_double(r.a1) << ',' << format_double(r.a2)
       << ',' << format_double(r.tv_numeric) << ',' << format_double(r.hellinger) << ','
       << format_double(r.beta_bound) << ',' << format_double(r.changepoint_bound) << ','
       << (r.holds ? "true" : "false") << '\n';
  }
  return os.str();
}

}  // namespace ducp::bounds
