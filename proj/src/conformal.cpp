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
#include "ducp/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ducp/error.hpp"
#include "ducp/text.hpp"

namespace ducp::conformal {

namespace {

constexpr double kMassTolerance = 1e-10;
constexpr double kQuantileSlack = 1e-12;
constexpr std::size_t kChunk = 512;

struct Scored {
  std::vector<model::ForwardResult> forward;
  std::vector<duf::ScoreDetail> gt;
  std::vector<duf::ScoreDetail> pred;
};

Tensor rows_of(const std::vector<std::vector<double>>& rows) {
  Tensor t({rows.size(), rows.front().size()});
  auto out = t.data();
  std::size_t k = 0;
  for (const auto& r : rows) {
    std::copy(r.begin(), r.end(), out.begin() + static_cast<std::ptrdiff_t>(k));
    k += r.size();
  }
  return t;
}

// Eval-mode forward plus scorer details for ground truth and (optionally) the prediction.
Scored score_episodes(const std::vector<synth::Episode>& episodes, const model::ModelConfig& cfg,
                      const ParamStore& params, const ParamStore& scorer, bool with_pred) {
  Scored out;
  RngStream unused(0);
  for (std::size_t begin = 0; begin < episodes.size(); begin += kChunk) {
    const std::size_t end = std::min(episodes.size(), begin + kChunk);
    std::vector<const synth::Episode*> batch;
    for (std::size_t i = begin; i < end; ++i) batch.push_back(&episodes[i]);
    auto fwd = model::forward_batch(batch, cfg, params, unused, model::Mode::eval);
    std::vector<std::vector<double>> phi, gt, pred;
    for (std::size_t i = 0; i < fwd.size(); ++i) {
      phi.push_back(fwd[i].phi_gl.values());
      gt.push_back(batch[i]->target.flatten());
      if (with_pred) pred.push_back(fwd[i].y_final.flatten());
    }
    const Tensor phi_t = rows_of(phi);
    auto g = duf::score_rows(phi_t, rows_of(gt), scorer);
    out.gt.insert(out.gt.end(), g.begin(), g.end());
    if (with_pred) {
      auto p = duf::score_rows(phi_t, rows_of(pred), scorer);
      out.pred.insert(out.pred.end(), p.begin(), p.end());
    }
    for (auto& f : fwd) out.forward.push_back(std::move(f));
  }
  return out;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("embedding lengths differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return d2;
}

}  // namespace

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::uniform: return "uniform";
    case Scheme::feature_decay: return "feature_decay";
    case Scheme::recency_decay: return "recency_decay";
  }
  return "uniform";
}

Scheme scheme_from_string(const std::string& text) {
  if (text == "uniform") return Scheme::uniform;
  if (text == "feature_decay") return Scheme::feature_decay;
  if (text == "recency_decay") return Scheme::recency_decay;
  throw UsageError("unknown scheme '" + text + "' (expected uniform, feature_decay or recency_decay)");
}

WeightedScoreDistribution WeightedScoreDistribution::from(std::span<const double> scores, const NormalizedWeights& w) {
  if (scores.size() != w.weights.size()) {
    throw DimensionError("scores and weights differ in length: " + std::to_string(scores.size()) + " vs " +
                         std::to_string(w.weights.size()));
  }
  WeightedScoreDistribution d;
  d.atoms.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw NumericError("non-finite calibration score at index " + std::to_string(i));
    d.atoms.emplace_back(scores[i], w.weights[i]);
  }
  std::stable_sort(d.atoms.begin(), d.atoms.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  d.infinity_mass = w.infinity_mass;
  return d;
}

double WeightedScoreDistribution::total_mass() const {
  long double s = infinity_mass;
  for (const auto& a : atoms) s += a.second;
  return static_cast<double>(s);
}

double feature_weight(std::span<const double> phi_pred, std::span<const double> phi_gt, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("temperature must be > 0, got " + format_double(temperature));
  return std::exp(-squared_distance(phi_pred, phi_gt) / temperature);
}

NormalizedWeights decay_normalize(std::span<const double> raw_weights, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) throw ParameterError("rho must lie in (0, 1], got " + format_double(rho));
  const std::size_t n = raw_weights.size();
  if (n == 0) throw UsageError("decay_normalize needs at least one weight");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return raw_weights[a] < raw_weights[b]; });
  // order[r] holds rank r+1; stable sort keeps later indices higher among ties.
  NormalizedWeights out;
  out.weights.assign(n, 0.0);
  long double total = 1.0L;
  for (std::size_t r = 0; r < n; ++r) {
    const double w = std::pow(rho, static_cast<double>(n - r));
    out.weights[order[r]] = w;
    total += w;
  }
  for (auto& w : out.weights) w = static_cast<double>(w / total);
  out.infinity_mass = static_cast<double>(1.0L / total);
  return out;
}

NormalizedWeights uniform_weights(std::size_t n) {
  if (n == 0) throw UsageError("uniform_weights needs n >= 1");
  const double m = 1.0 / static_cast<double>(n + 1);
  return {std::vector<double>(n, m), m};
}

double weighted_quantile(const WeightedScoreDistribution& dist, double q) {
  if (!(q > 0.0 && q < 1.0)) throw ParameterError("quantile level must lie in (0, 1), got " + format_double(q));
  if (std::abs(dist.total_mass() - 1.0) > kMassTolerance || dist.infinity_mass < 0.0) {
    throw UsageError("weighted score distribution is not normalized (total " + format_double(dist.total_mass()) + ")");
  }
  long double cum = 0.0L;
  for (const auto& [s, w] : dist.atoms) {
    if (w < 0.0) throw UsageError("negative atom mass");
    cum += w;
    if (cum >= static_cast<long double>(q) - kQuantileSlack) return s;
  }
  return kInf;
}

NormalizedWeights scheme_weights(const std::vector<CalibrationExample>& examples, Scheme scheme, double rho,
                                 double temperature) {
  if (examples.empty()) throw UsageError("empty calibration set");
  switch (scheme) {
    case Scheme::uniform: return uniform_weights(examples.size());
    case Scheme::recency_decay: return decay_normalize(std::vector<double>(examples.size(), 1.0), rho);
    case Scheme::feature_decay: break;
  }
  // Ranks only depend on order, so embeddings are ranked by the exponent -|d|^2 / T, which cannot underflow.
  std::vector<double> keys;
  keys.reserve(examples.size());
  for (const auto& ex : examples) {
    if (ex.raw_weight) {
      if (!(*ex.raw_weight >= 0.0 && *ex.raw_weight <= 1.0)) {
        throw ParameterError("raw weight of episode " + std::to_string(ex.episode_id) + " outside [0, 1]");
      }
      keys.push_back(*ex.raw_weight > 0.0 ? std::log(*ex.raw_weight) : -std::numeric_limits<double>::infinity());
    } else if (!ex.phi_pred.empty()) {
      keys.push_back(-squared_distance(ex.phi_pred, ex.phi_gt) / temperature);
    } else {
      throw UsageError("episode " + std::to_string(ex.episode_id) + " has neither a raw weight nor embeddings");
    }
  }
  return decay_normalize(keys, rho);
}

CalibrationResult calibrate(const std::vector<CalibrationExample>& examples, double alpha, Scheme scheme, double rho,
                            double temperature, std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1), got " + format_double(alpha));
  if (!(temperature > 0.0)) throw ParameterError("temperature must be > 0");
  const auto w = scheme_weights(examples, scheme, rho, temperature);
  std::vector<double> scores;
  scores.reserve(examples.size());
  for (const auto& ex : examples) scores.push_back(ex.score);
  CalibrationResult r;
  r.alpha = alpha;
  r.tau_star = weighted_quantile(WeightedScoreDistribution::from(scores, w), 1.0 - alpha);
  r.scheme = scheme;
  r.rho = rho;
  r.temperature = temperature;
  r.n = examples.size();
  r.seed = seed;
  r.created_at = reproducible_timestamp();
  return r;
}

bool ducs_membership(double score, const CalibrationResult& cal) { return score <= cal.tau_star; }

std::vector<const Hypothesis*> PredictionSet::members() const {
  std::vector<const Hypothesis*> out;
  for (const auto& h : hypotheses) {
    if (h.member) out.push_back(&h);
  }
  return out;
}

std::vector<CalibrationExample> calibration_examples(const std::vector<synth::Episode>& episodes,
                                                     const model::ModelConfig& cfg, const ParamStore& params,
                                                     const ParamStore& scorer) {
  if (episodes.empty()) throw UsageError("empty calibration set");
  const auto s = score_episodes(episodes, cfg, params, scorer, true);
  std::vector<CalibrationExample> out(episodes.size());
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    out[i].episode_id = static_cast<long long>(episodes[i].episode_id);
    out[i].score = s.gt[i].score;
    out[i].phi_gt = s.gt[i].embedding.values();
    out[i].phi_pred = s.pred[i].embedding.values();
  }
  return out;
}

std::vector<double> ground_truth_scores(const std::vector<synth::Episode>& episodes, const model::ModelConfig& cfg,
                                        const ParamStore& params, const ParamStore& scorer) {
  if (episodes.empty()) return {};
  const auto s = score_episodes(episodes, cfg, params, scorer, false);
  std::vector<double> out;
  out.reserve(s.gt.size());
  for (const auto& d : s.gt) out.push_back(d.score);
  return out;
}

PredictionSet mc_dropout_set(const synth::Episode& x, std::size_t H, const CalibrationResult& cal,
                             const model::ModelConfig& cfg, const ParamStore& params, const ParamStore& scorer,
                             RngStream& rng) {
  if (H < 1) throw ParameterError("H must be >= 1");
  std::vector<const synth::Episode*> batch(H, &x);
  auto fwd = model::forward_batch(batch, cfg, params, rng, model::Mode::mc_dropout);
  std::vector<std::vector<double>> phi, ys;
  for (const auto& f : fwd) {
    phi.push_back(f.phi_gl.values());
    ys.push_back(f.y_final.flatten());
  }
  const auto details = duf::score_rows(rows_of(phi), rows_of(ys), scorer);
  PredictionSet set;
  set.tau_star = cal.tau_star;
  for (std::size_t h = 0; h < H; ++h) {
    set.hypotheses.push_back({fwd[h].y_final, details[h].score, ducs_membership(details[h].score, cal)});
  }
  return set;
}

CoverageReport coverage_from_scores(std::span<const double> gt_scores, const CalibrationResult& cal) {
  if (gt_scores.empty()) throw UsageError("empty test set");
  CoverageReport r;
  r.n_test = gt_scores.size();
  for (double s : gt_scores) r.covered_count += ducs_membership(s, cal);
  r.coverage = static_cast<double>(r.covered_count) / static_cast<double>(r.n_test);
  r.alpha = cal.alpha;
  return r;
}

CoverageReport empirical_coverage(const std::vector<synth::Episode>& test, const CalibrationResult& cal,
                                  const model::ModelConfig& cfg, const ParamStore& params, const ParamStore& scorer) {
  if (test.empty()) throw UsageError("empty test set");
  const auto scores = ground_truth_scores(test, cfg, params, scorer);
  return coverage_from_scores(scores, cal);
}

std::string calibration_to_json(const CalibrationResult& cal) {
  nlohmann::ordered_json j;
  j["alpha"] = cal.alpha;
  if (std::isinf(cal.tau_star)) {
    j["tau_star"] = "inf";
  } else {
    j["tau_star"] = cal.tau_star;
  }
  j["scheme"] = to_string(cal.scheme);
  j["rho"] = cal.rho;
  j["temperature"] = cal.temperature;
  j["n"] = cal.n;
  j["seed"] = cal.seed;
  j["created_at"] = cal.created_at;
  return j.dump(2) + "\n";
}

CalibrationResult calibration_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    CalibrationResult r;
    r.alpha = j.at("alpha").get<double>();
    const auto& tau = j.at("tau_star");
    if (tau.is_string()) {
      if (tau.get<std::string>() != "inf") throw UsageError("tau_star string must be \"inf\"");
      r.tau_star = kInf;
    } else {
      r.tau_star = tau.get<double>();
    }
    r.scheme = scheme_from_string(j.at("scheme").get<std::string>());
    r.rho = j.at("rho").get<double>();
    r.temperature = j.at("temperature").get<double>();
    r.n = j.at("n").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.created_at = j.value("created_at", std::string());
    if (!(r.alpha > 0.0 && r.alpha < 1.0)) throw UsageError("calibration alpha outside (0, 1)");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed calibration JSON: ") + e.what());
  }
}

std::string examples_to_csv(const std::vector<CalibrationExample>& examples) {
  std::ostringstream os;
  os << "episode_id,score,raw_weight\n";
  for (const auto& ex : examples) {
    os << ex.episode_id << ',' << format_double(ex.score) << ',';
    if (ex.raw_weight) {
      os << format_double(*ex.raw_weight);
    } else if (!ex.phi_pred.empty()) {
      os << format_double(feature_weight(ex.phi_pred, ex.phi_gt, 1.0));
    }
    os << '\n';
  }
  return os.str();
}

std::vector<CalibrationExample> examples_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw UsageError("scores CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line, ',');
  if (header.size() < 2 || header[0] != "episode_id" || header[1] != "score" ||
      (header.size() == 3 && header[2] != "raw_weight") || header.size() > 3) {
    throw UsageError("scores CSV header must be episode_id,score[,raw_weight]");
  }
  std::vector<CalibrationExample> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() < 2 || f.size() > header.size()) {
      throw UsageError("scores CSV line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    }
    CalibrationExample ex;
    ex.episode_id = parse_int(f[0]);
    ex.score = parse_double(f[1]);
    if (!std::isfinite(ex.score)) throw UsageError("non-finite score on line " + std::to_string(lineno));
    if (f.size() == 3 && !f[2].empty()) ex.raw_weight = parse_double(f[2]);
    out.push_back(std::move(ex));
  }
  return out;
}

std::string reproducible_timestamp() {
  std::time_t t = 0;
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH"); env != nullptr && *env != '\0') {
    t = static_cast<std::time_t>(parse_int(env));
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace ducp::conformal
