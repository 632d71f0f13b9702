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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ducp/conformal.hpp"
#include "ducp/duf.hpp"
#include "ducp/model.hpp"
#include "ducp/params.hpp"
#include "ducp/synth.hpp"

namespace ducp::pipeline {

struct TrainConfig {
  synth::TrajectorySpec trajectory;
  model::ModelConfig model;
  std::size_t scorer_hidden = 128;

  std::size_t epochs = 32;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  double weight_decay = 1e-4;
  double lambda = 0.6;
  std::size_t H_train = 20;
  std::size_t scorer_update_period = 100;
  /// Scorer Adam steps taken at each scorer update, drawn from the hypotheses of the last period.
  std::size_t scorer_steps_per_update = 100;
  std::size_t scorer_batch = 128;
  double scorer_lr = 3e-4;

  std::uint64_t seed = 0;
  std::uint64_t world_seed = 0;
  std::size_t n_train = 2000;
  std::size_t n_cal = 500;
  std::size_t n_test = 5000;

  double alpha = 0.1;
  double corruption_sigma = 0.5;

  void validate() const;
  std::size_t iterations() const;
  duf::ScorerConfig scorer_config() const;

  bool operator==(const TrainConfig&) const = default;
};

TrainConfig default_config();

/// Keys missing from `text` keep the values of `base`.
TrainConfig config_from_json(const std::string& text, TrainConfig base = default_config());
std::string config_to_json(const TrainConfig& cfg);

struct DataSplits {
  std::vector<synth::Episode> train;
  std::vector<synth::Episode> cal;
  std::vector<synth::Episode> test;
};

/// Stream that make_splits and the simulate command draw episodes from.
RngStream data_stream(std::uint64_t seed);

/// iid regime-0 episodes with disjoint id ranges: train, then calibration, then test.
DataSplits make_splits(const TrainConfig& cfg);

struct LogRow {
  std::size_t step = 0;
  double l_task = 0.0;
  double l_score = 0.0;
  double l_adv = 0.0;
  double l_net = 0.0;
};

struct TrainResult {
  ParamStore model;
  ParamStore scorer;
  std::vector<LogRow> log;
  /// Sorted ids of every episode that entered a minibatch.
  std::vector<std::size_t> touched_ids;
};

using ProgressFn = std::function<void(const LogRow&)>;

/// Throws UsageError if the splits share episode ids, NumericError (with the step) on non-finite values.
TrainResult train(const TrainConfig& cfg, const DataSplits& data, const ProgressFn& progress = {});

std::string log_to_csv(const std::vector<LogRow>& log);

struct EvalReport {
  double task_error = 0.0;
  double mean_score_gt = 0.0;
  double mean_score_corrupted = 0.0;
  double score_separation = 0.0;
  double auroc = 0.5;
};

/// Probability a positive outscores a negative, ties counted half.
double auroc(std::span<const double> negatives, std::span<const double> positives);

/// Mean over episodes and frames of the Euclidean norm of the theta-block error.
double task_error(const PoseShapeOutput& pred, const PoseShapeOutput& target);

EvalReport evaluate(const TrainConfig& cfg, const ParamStore& model_params, const ParamStore& scorer,
                    const std::vector<synth::Episode>& test, RngStream& rng);

struct AblationRow {
  std::size_t H = 1;
  std::uint64_t seed = 0;
  double task_error = 0.0;
};

std::vector<AblationRow> ablate_H(const TrainConfig& cfg, const std::vector<std::size_t>& H_values,
                                  const std::vector<std::uint64_t>& seeds);
std::string ablation_to_csv(const std::vector<AblationRow>& rows);

struct CoverageSpec {
  synth::StreamMode mode = synth::StreamMode::iid;
  long long segment_length = 50;
  double shift = 0.0;
  std::size_t n_cal = 500;
  std::size_t n_test = 5000;
  double alpha = 0.1;
  double rho = 0.99;
  double temperature = 1.0;
  std::vector<conformal::Scheme> schemes{conformal::Scheme::uniform};
};

struct CoverageRow {
  std::uint64_t seed = 0;
  conformal::Scheme scheme = conformal::Scheme::uniform;
  double coverage = 0.0;
  std::size_t n_test = 0;
};

/// For each seed: a calibration stream of n_cal episodes (independent of the data_stream used for training),
/// then n_test iid test episodes from the regime of the last calibration episode. Every scheme is calibrated
/// on the same scores.
std::vector<CoverageRow> coverage_experiment(const TrainConfig& cfg, const ParamStore& model_params,
                                             const ParamStore& scorer, const CoverageSpec& spec,
                                             const std::vector<std::uint64_t>& seeds);
/// Mean coverage of one scheme over its rows.
double mean_coverage(const std::vector<CoverageRow>& rows, conformal::Scheme scheme);
/// `seed,scheme,coverage,n_test` rows followed by `mean` and `std` rows per scheme.
std::string coverage_to_csv(const std::vector<CoverageRow>& rows);

}  // namespace ducp::pipeline
