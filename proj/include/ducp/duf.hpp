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
#include <span>
#include <vector>

#include "ducp/autodiff.hpp"
#include "ducp/model.hpp"

namespace ducp::duf {

/// Nonconformity score in (0, 1). Low means the output looks like ground truth.
class UncertaintyScore {
 public:
  explicit UncertaintyScore(double value);
  double value() const noexcept { return value_; }
  friend auto operator<=>(const UncertaintyScore&, const UncertaintyScore&) = default;

 private:
  double value_;
};

/// MLP: concat(phi_gl, flatten(theta), flatten(beta)) -> hidden -> hidden -> scalar.
struct ScorerConfig {
  std::size_t d_embed = 64;
  std::size_t output_dim = 256;
  std::size_t hidden = 128;

  static ScorerConfig for_model(const model::ModelConfig& cfg);
  std::size_t input_dim() const { return d_embed + output_dim; }
};

ParamStore init_scorer(const ScorerConfig& cfg, RngStream& rng);

struct ScorerGraph {
  ad::Var penultimate;     // [N x hidden]; the feature used by the distance weight
  ad::Var pre_activation;  // [N x 1]
  ad::Var score;           // [N x 1], sigmoid of pre_activation
};

/// Records the scorer on `tape`. `phi` is [N x d_embed], `y` is [N x output_dim].
ScorerGraph score_graph(ad::Tape& tape, const ParamStore& scorer, ad::Var phi, ad::Var y);

struct ScoreDetail {
  double score = 0.5;
  double pre_activation = 0.0;
  Tensor embedding;  // penultimate hidden layer
};

UncertaintyScore score(const Tensor& phi_gl, const PoseShapeOutput& y, const ParamStore& scorer);
ScoreDetail score_detail(const Tensor& phi_gl, const PoseShapeOutput& y, const ParamStore& scorer);
/// Row-wise scoring of phi [N x d_embed] against outputs [N x output_dim].
std::vector<ScoreDetail> score_rows(const Tensor& phi, const Tensor& outputs, const ParamStore& scorer);

/// mean(s_gt^2) + mean((1 - s_pred)^2).
double loss_score(std::span<const double> scores_gt, std::span<const double> scores_pred);
/// mean(s_pred^2).
double loss_adv(std::span<const double> scores_pred);
/// l_task + lambda * (l_score + l_adv).
double loss_total(double l_task, double l_score, double l_adv, double lambda);

ad::Var loss_score(ad::Var scores_gt, ad::Var scores_pred);
ad::Var loss_adv(ad::Var scores_pred);

}  // namespace ducp::duf
