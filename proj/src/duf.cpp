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
#include "ducp/duf.hpp"

#include <cmath>

#include "ducp/error.hpp"

namespace ducp::duf {

UncertaintyScore::UncertaintyScore(double value) : value_(value) {
  if (!(value > 0.0 && value < 1.0)) throw NumericError("uncertainty score outside (0, 1): " + std::to_string(value));
}

ScorerConfig ScorerConfig::for_model(const model::ModelConfig& cfg) {
  ScorerConfig s;
  s.d_embed = cfg.d_embed;
  s.output_dim = cfg.output_dim();
  return s;
}

ParamStore init_scorer(const ScorerConfig& cfg, RngStream& rng) {
  auto weight = [&](std::size_t in, std::size_t out, double gain) {
    Tensor w({in, out});
    const double sd = gain / std::sqrt(static_cast<double>(in));
    for (auto& v : w.data()) v = sd * rng.normal();
    return w;
  };
  ParamStore ps;
  ps.add("l1.w", weight(cfg.input_dim(), cfg.hidden, std::sqrt(2.0)));
  ps.add("l1.b", Tensor({cfg.hidden}, 0.0));
  ps.add("l2.w", weight(cfg.hidden, cfg.hidden, std::sqrt(2.0)));
  ps.add("l2.b", Tensor({cfg.hidden}, 0.0));
  ps.add("out.w", weight(cfg.hidden, 1, 0.1));
  ps.add("out.b", Tensor({1}, 0.0));
  return ps;
}

ScorerGraph score_graph(ad::Tape& tape, const ParamStore& scorer, ad::Var phi, ad::Var y) {
  const std::size_t in = scorer.get("l1.w").rows();
  if (phi.shape().size() != 2 || y.shape().size() != 2 || phi.shape()[0] != y.shape()[0] ||
      phi.shape()[1] + y.shape()[1] != in) {
    throw DimensionError("scorer input phi" + shape_to_string(phi.shape()) + " + y" + shape_to_string(y.shape()) +
                         " does not match input width " + std::to_string(in));
  }
  auto p = [&](const char* name) { return tape.param(scorer, name); };
  ScorerGraph g;
  auto h1 = ad::relu(ad::affine(ad::concat_cols(phi, y), p("l1.w"), p("l1.b")));
  g.penultimate = ad::relu(ad::affine(h1, p("l2.w"), p("l2.b")));
  g.pre_activation = ad::affine(g.penultimate, p("out.w"), p("out.b"));
  g.score = ad::sigmoid(g.pre_activation);
  return g;
}

std::vector<ScoreDetail> score_rows(const Tensor& phi, const Tensor& outputs, const ParamStore& scorer) {
  ad::Tape tape;
  const auto g = score_graph(tape, scorer, tape.constant(phi), tape.constant(outputs));
  const std::size_t n = phi.rows();
  const std::size_t hidden = g.penultimate.value().cols();
  std::vector<ScoreDetail> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].score = g.score.value()[i];
    out[i].pre_activation = g.pre_activation.value()[i];
    const auto row = g.penultimate.value().data().subspan(i * hidden, hidden);
    out[i].embedding = Tensor({hidden}, std::vector<double>(row.begin(), row.end()));
  }
  return out;
}

ScoreDetail score_detail(const Tensor& phi_gl, const PoseShapeOutput& y, const ParamStore& scorer) {
  const auto flat = y.flatten();
  return score_rows(phi_gl.reshaped({1, phi_gl.size()}), Tensor({1, flat.size()}, flat), scorer).front();
}

UncertaintyScore score(const Tensor& phi_gl, const PoseShapeOutput& y, const ParamStore& scorer) {
  return UncertaintyScore(score_detail(phi_gl, y, scorer).score);
}

namespace {
double mean_of(std::span<const double> xs, double (*f)(double)) {
  double s = 0.0;
  for (double x : xs) s += f(x);
  return s / static_cast<double>(xs.size());
}
}  // namespace

double loss_score(std::span<const double> scores_gt, std::span<const double> scores_pred) {
  if (scores_gt.empty() || scores_pred.empty()) throw UsageError("loss_score needs non-empty score lists");
  return mean_of(scores_gt, [](double s) { return s * s; }) +
         mean_of(scores_pred, [](double s) { return (1.0 - s) * (1.0 - s); });
}

double loss_adv(std::span<const double> scores_pred) {
  if (scores_pred.empty()) throw UsageError("loss_adv needs a non-empty score list");
  return mean_of(scores_pred, [](double s) { return s * s; });
}

double loss_total(double l_task, double l_score, double l_adv, double lambda) {
  if (!(lambda >= 0.0)) throw ParameterError("lambda must be non-negative");
  return l_task + lambda * (l_score + l_adv);
}

ad::Var loss_score(ad::Var scores_gt, ad::Var scores_pred) {
  return ad::add(ad::mean(ad::square(scores_gt)), ad::mean(ad::square(ad::add_scalar(ad::scale(scores_pred, -1.0), 1.0))));
}

ad::Var loss_adv(ad::Var scores_pred) { return ad::mean(ad::square(scores_pred)); }

}  // namespace ducp::duf
