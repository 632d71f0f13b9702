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

#include <algorithm>
#include <cmath>
#include <set>

#include "ducp/error.hpp"
#include "ducp/pipeline.hpp"

using namespace ducp;
using namespace ducp::pipeline;

namespace {

TrainConfig tiny() {
  TrainConfig cfg = default_config();
  cfg.n_train = 64;
  cfg.n_cal = 16;
  cfg.n_test = 32;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.H_train = 2;
  cfg.scorer_update_period = 3;
  cfg.scorer_steps_per_update = 5;
  cfg.scorer_batch = 16;
  return cfg;
}

bool same_params(const ParamStore& a, const ParamStore& b) {
  if (a.names() != b.names()) return false;
  for (const auto& n : a.names()) {
    if (!(a.get(n) == b.get(n))) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("default_config") {
  const auto cfg = default_config();
  CHECK(cfg.lambda == 0.6);
  CHECK(cfg.H_train == 20);
  CHECK(cfg.trajectory.T == 16);
  CHECK(cfg.model.T == 16);
  CHECK(cfg.alpha == 0.1);
  CHECK(cfg.scorer_update_period == 100);
  cfg.validate();
}

TEST_CASE("config JSON") {
  auto cfg = tiny();
  cfg.lambda = 0.25;
  cfg.model.dropout_rate = 0.2;
  CHECK(config_from_json(config_to_json(cfg)) == cfg);
  const auto partial = config_from_json("{\"H_train\": 3, \"T\": 12}");
  CHECK(partial.H_train == 3);
  CHECK(partial.model.T == 12);
  CHECK(partial.trajectory.T == 12);
  CHECK(partial.lambda == 0.6);
  CHECK_THROWS_AS(config_from_json("{\"bogus\": 1}"), UsageError);
  CHECK_THROWS_AS(config_from_json("{\"H_train\": 0}"), ParameterError);
  CHECK_THROWS_AS(config_from_json("{\"lambda\": -1}"), ParameterError);
  CHECK_THROWS_AS(config_from_json("[1]"), UsageError);
}

TEST_CASE("splits are disjoint and overlap is rejected") {
  const auto cfg = tiny();
  auto data = make_splits(cfg);
  CHECK(data.train.size() == 64);
  CHECK(data.cal.size() == 16);
  CHECK(data.test.size() == 32);
  std::set<std::size_t> ids;
  for (const auto* s : {&data.train, &data.cal, &data.test})
    for (const auto& e : *s) ids.insert(e.episode_id);
  CHECK(ids.size() == 112);

  data.cal.push_back(data.train.front());
  CHECK_THROWS_AS(train(cfg, data), UsageError);
}

TEST_CASE("training is deterministic, finite and never touches held-out episodes") {
  const auto cfg = tiny();
  const auto data = make_splits(cfg);
  const auto a = train(cfg, data);
  const auto b = train(cfg, data);
  CHECK(same_params(a.model, b.model));
  CHECK(same_params(a.scorer, b.scorer));
  REQUIRE(a.log.size() == cfg.iterations());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    const auto& r = a.log[i];
    CHECK(r.step == i);
    CHECK(std::isfinite(r.l_task));
    CHECK(std::isfinite(r.l_score));
    CHECK(std::isfinite(r.l_adv));
    CHECK(std::abs(r.l_net - (r.l_task + cfg.lambda * (r.l_score + r.l_adv))) <= 1e-12);
    CHECK(r.l_task == b.log[i].l_task);
  }
  std::set<std::size_t> held;
  for (const auto& e : data.cal) held.insert(e.episode_id);
  for (const auto& e : data.test) held.insert(e.episode_id);
  for (auto id : a.touched_ids) CHECK_FALSE(held.contains(id));
  CHECK(log_to_csv(a.log).rfind("step,l_task,l_score,l_adv,l_net\n", 0) == 0);

  auto other = cfg;
  other.seed = 1;
  CHECK_FALSE(same_params(train(other, make_splits(other)).model, a.model));
}

TEST_CASE("estimator steps leave the scorer alone") {
  auto cfg = tiny();
  cfg.scorer_update_period = 1000;
  const auto data = make_splits(cfg);
  auto one = cfg;
  one.epochs = 1;
  const auto short_run = train(one, data);
  const auto long_run = train(cfg, data);
  CHECK(same_params(short_run.scorer, long_run.scorer));
  CHECK_FALSE(same_params(short_run.model, long_run.model));
}

TEST_CASE("score loss on detached inputs has no estimator gradient") {
  const auto cfg = tiny();
  RngStream init(3);
  const auto params = model::init_params(cfg.model, init);
  const auto scorer = duf::init_scorer(cfg.scorer_config(), init);
  const auto data = make_splits(cfg);
  std::vector<const synth::Episode*> batch{&data.train[0], &data.train[1]};
  ad::Tape tape;
  RngStream rng(4);
  const auto g = model::forward_graph(tape, params, cfg.model, model::stack_observations(batch), model::Mode::train, rng);
  const auto phi = ad::detach(g.phi_gl);
  const auto s_gt = duf::score_graph(tape, scorer, phi, tape.constant(model::stack_targets(batch))).score;
  const auto s_pred = duf::score_graph(tape, scorer, phi, ad::detach(g.y_final)).score;
  const auto loss = duf::loss_score(s_gt, s_pred);
  for (const auto& [name, grad] : tape.backward(loss, params)) {
    for (double v : grad.data()) CHECK(v == 0.0);
  }
  double total = 0.0;
  for (const auto& [name, grad] : tape.backward(loss, scorer))
    for (double v : grad.data()) total += std::abs(v);
  CHECK(total > 0.0);
}

TEST_CASE("plain regression reaches low task loss on the default task") {
  auto cfg = default_config();
  cfg.lambda = 0.0;
  cfg.H_train = 1;
  cfg.n_test = 500;
  const auto data = make_splits(cfg);
  const auto result = train(cfg, data);
  std::vector<const synth::Episode*> ptrs;
  for (const auto& e : data.test) ptrs.push_back(&e);
  RngStream unused(0);
  const auto fwd = model::forward_batch(ptrs, cfg.model, result.model, unused, model::Mode::eval);
  double loss = 0.0;
  for (std::size_t i = 0; i < fwd.size(); ++i) loss += model::loss_task(fwd[i].y_final, data.test[i].target);
  loss /= static_cast<double>(fwd.size());
  MESSAGE("eval task loss " << loss);
  CHECK(loss < 0.05);
}

TEST_CASE("auroc") {
  CHECK(auroc(std::vector<double>{0.1, 0.2}, std::vector<double>{0.8, 0.9}) == 1.0);
  CHECK(auroc(std::vector<double>{0.8, 0.9}, std::vector<double>{0.1, 0.2}) == 0.0);
  CHECK(auroc(std::vector<double>(5, 0.4), std::vector<double>(3, 0.4)) == 0.5);
  CHECK(auroc(std::vector<double>{0.1, 0.5}, std::vector<double>{0.3}) == 0.5);
  CHECK_THROWS_AS(auroc({}, std::vector<double>{0.1}), UsageError);
}

TEST_CASE("task_error") {
  PoseShapeOutput a{Tensor({2, 3}, 0.0), Tensor({1, 3}, 0.0)};
  PoseShapeOutput b = a;
  CHECK(task_error(a, b) == 0.0);
  b.theta.at(0, 0) = 3.0;
  b.theta.at(1, 0) = 4.0;
  b.beta.at(0, 1) = 10.0;
  CHECK(std::abs(task_error(a, b) - 5.0 / 3.0) < 1e-15);
}

TEST_CASE("evaluate with a constant scorer") {
  const auto cfg = tiny();
  const auto data = make_splits(cfg);
  RngStream init(5);
  const auto params = model::init_params(cfg.model, init);
  auto scorer = duf::init_scorer(cfg.scorer_config(), init);
  scorer.set("out.w", Tensor({cfg.scorer_hidden, 1}, 0.0));
  RngStream rng(6);
  const auto r = evaluate(cfg, params, scorer, data.test, rng);
  CHECK(r.score_separation == 0.0);
  CHECK(r.auroc == 0.5);
  CHECK(r.task_error > 0.0);
}

TEST_CASE("ablate_H row counts") {
  auto cfg = tiny();
  cfg.epochs = 1;
  const auto single = ablate_H(cfg, {1}, {0});
  REQUIRE(single.size() == 1);
  CHECK(single[0].H == 1);
  const auto rows = ablate_H(cfg, {1, 2}, {0, 1});
  CHECK(rows.size() == 4);
  CHECK(rows[0].task_error == single[0].task_error);
  const auto csv = ablation_to_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK_THROWS_AS(ablate_H(cfg, {}, {0}), UsageError);
}
