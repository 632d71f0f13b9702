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
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ducp/duf.hpp"
#include "ducp/model.hpp"
#include "ducp/params.hpp"
#include "ducp/rng.hpp"
#include "ducp/synth.hpp"

namespace ducp::conformal {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// recency_decay ranks every calibration point by position only (all raw weights equal).
enum class Scheme { uniform, feature_decay, recency_decay };

std::string to_string(Scheme scheme);
Scheme scheme_from_string(const std::string& text);

struct CalibrationExample {
  long long episode_id = 0;
  double score = 0.5;
  std::optional<double> raw_weight;
  std::vector<double> phi_pred;  // scorer embedding of (x, prediction)
  std::vector<double> phi_gt;    // scorer embedding of (x, ground truth)
};

struct NormalizedWeights {
  std::vector<double> weights;
  double infinity_mass = 0.0;
};

struct WeightedScoreDistribution {
  std::vector<std::pair<double, double>> atoms;  // (score, mass), ascending by score
  double infinity_mass = 0.0;

  static WeightedScoreDistribution from(std::span<const double> scores, const NormalizedWeights& w);
  double total_mass() const;
};

struct CalibrationResult {
  double alpha = 0.1;
  double tau_star = kInf;
  Scheme scheme = Scheme::uniform;
  double rho = 1.0;
  double temperature = 1.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string created_at;

  bool operator==(const CalibrationResult&) const = default;
};

struct Hypothesis {
  PoseShapeOutput output;
  double score = 0.5;
  bool member = false;
};

struct PredictionSet {
  std::vector<Hypothesis> hypotheses;
  double tau_star = kInf;

  std::vector<const Hypothesis*> members() const;
};

struct CoverageReport {
  std::size_t n_test = 0;
  std::size_t covered_count = 0;
  double coverage = 0.0;
  double alpha = 0.1;
  std::optional<double> lower_bound_used;
};

/// exp(-|phi_pred - phi_gt|^2 / temperature).
double feature_weight(std::span<const double> phi_pred, std::span<const double> phi_gt, double temperature);

/// Rank-decay normalization. Largest raw weight gets rank n; ties go to the later index.
/// The test point carries rho^0 = 1 and is returned as infinity_mass.
NormalizedWeights decay_normalize(std::span<const double> raw_weights, double rho);
NormalizedWeights uniform_weights(std::size_t n);

/// Smallest atom score whose cumulative mass reaches q, or kInf.
double weighted_quantile(const WeightedScoreDistribution& dist, double q);

/// Normalized calibration weights for a scheme, in example order.
NormalizedWeights scheme_weights(const std::vector<CalibrationExample>& examples, Scheme scheme, double rho,
                                 double temperature);

CalibrationResult calibrate(const std::vector<CalibrationExample>& examples, double alpha, Scheme scheme,
                            double rho = 1.0, double temperature = 1.0, std::uint64_t seed = 0);

bool ducs_membership(double score, const CalibrationResult& cal);
inline bool ducs_membership(const duf::UncertaintyScore& s, const CalibrationResult& cal) {
  return ducs_membership(s.value(), cal);
}

/// Ground-truth scores and embeddings for calibration episodes (eval-mode forward).
std::vector<CalibrationExample> calibration_examples(const std::vector<synth::Episode>& episodes,
                                                     const model::ModelConfig& cfg, const ParamStore& params,
                                                     const ParamStore& scorer);

/// Eval-mode S(x, y_gt) for each episode.
std::vector<double> ground_truth_scores(const std::vector<synth::Episode>& episodes, const model::ModelConfig& cfg,
                                        const ParamStore& params, const ParamStore& scorer);

PredictionSet mc_dropout_set(const synth::Episode& x, std::size_t H, const CalibrationResult& cal,
                             const model::ModelConfig& cfg, const ParamStore& params, const ParamStore& scorer,
                             RngStream& rng);

CoverageReport empirical_coverage(const std::vector<synth::Episode>& test, const CalibrationResult& cal,
                                  const model::ModelConfig& cfg, const ParamStore& params, const ParamStore& scorer);
CoverageReport coverage_from_scores(std::span<const double> gt_scores, const CalibrationResult& cal);

std::string calibration_to_json(const CalibrationResult& cal);
CalibrationResult calibration_from_json(const std::string& text);

/// `episode_id,score,raw_weight`; raw_weight may be blank or the column absent.
std::string examples_to_csv(const std::vector<CalibrationExample>& examples);
std::vector<CalibrationExample> examples_from_csv(const std::string& text);

/// ISO-8601 UTC stamp from SOURCE_DATE_EPOCH, or the epoch when unset.
std::string reproducible_timestamp();

}  // namespace ducp::conformal
