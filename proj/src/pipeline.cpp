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
#include "ducp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ducp/adam.hpp"
#include "ducp/error.hpp"
#include "ducp/text.hpp"

namespace ducp::pipeline {

namespace {

enum Stream : std::uint64_t { kInit = 1, kBatches = 2, kModelNoise = 3, kScorer = 4, kData = 5, kCoverage = 7 };

// Rows kept from each period for the scorer: one hypothesis per episode.
struct ReplayBuffer {
  std::size_t capacity = 0;
  std::size_t next = 0;
  std::vector<std::vector<double>> phi, pred, gt;

  void push(std::vector<double> p, std::vector<double> y, std::vector<double> t) {
    if (phi.size() < capacity) {
      phi.push_back(std::move(p));
      pred.push_back(std::move(y));
      gt.push_back(std::move(t));
      return;
    }
    phi[next] = std::move(p);
    pred[next] = std::move(y);
    gt[next] = std::move(t);
    next = (next + 1) % capacity;
  }
  std::size_t size() const { return phi.size(); }
};

Tensor gather(const std::vector<std::vector<double>>& rows, const std::vector<std::size_t>& idx) {
  const std::size_t w = rows.front().size();
  Tensor t({idx.size(), w});
  auto out = t.data();
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy(rows[idx[i]].begin(), rows[idx[i]].end(), out.begin() + i * w);
  return t;
}

Tensor repeat_each(const Tensor& x, std::size_t times) {
  const std::size_t rows = x.rows(), w = x.cols();
  Tensor out({rows * times, w});
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t h = 0; h < times; ++h) {
      std::copy(src.begin() + r * w, src.begin() + (r + 1) * w, dst.begin() + (r * times + h) * w);
    }
  }
  return out;
}

void scorer_update(const TrainConfig& cfg, ParamStore& scorer, Adam& opt, const ReplayBuffer& buf, RngStream& rng) {
  for (std::size_t s = 0; s < cfg.scorer_steps_per_update; ++s) {
    std::vector<std::size_t> idx(std::min(cfg.scorer_batch, buf.size()));
    for (auto& i : idx) i = rng.below(buf.size());
    ad::Tape tape;
    auto phi = tape.constant(gather(buf.phi, idx));
    const auto s_gt = duf::score_graph(tape, scorer, phi, tape.constant(gather(buf.gt, idx))).score;
    const auto s_pred = duf::score_graph(tape, scorer, phi, tape.constant(gather(buf.pred, idx))).score;
    opt.step(scorer, tape.backward(duf::loss_score(s_gt, s_pred), scorer));
  }
}

void check_disjoint(const DataSplits& data) {
  std::set<std::size_t> seen;
  for (const auto* split : {&data.train, &data.cal, &data.test}) {
    std::set<std::size_t> mine;
    for (const auto& e : *split) mine.insert(e.episode_id);
    for (auto id : mine) {
      if (!seen.insert(id).second) throw UsageError("episode id " + std::to_string(id) + " appears in two splits");
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  trajectory.validate();
  model.validate();
  if (model.T != trajectory.T || model.m != trajectory.m || model.d_theta != trajectory.d_theta ||
      model.d_beta != trajectory.d_beta) {
    throw ParameterError("model dimensions do not match the trajectory spec");
  }
  if (H_train < 1) throw ParameterError("H_train must be >= 1");
  if (!(lambda >= 0.0)) throw ParameterError("lambda must be >= 0");
  if (scorer_update_period < 1) throw ParameterError("scorer_update_period must be >= 1");
  if (batch_size < 1 || scorer_batch < 1) throw ParameterError("batch sizes must be >= 1");
  if (epochs < 1) throw ParameterError("epochs must be >= 1");
  if (!(lr > 0.0) || !(scorer_lr > 0.0)) throw ParameterError("learning rates must be > 0");
  if (n_train < 1 || n_cal < 1 || n_test < 1) throw ParameterError("split sizes must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
}

std::size_t TrainConfig::iterations() const { return epochs * ((n_train + batch_size - 1) / batch_size); }

duf::ScorerConfig TrainConfig::scorer_config() const {
  auto s = duf::ScorerConfig::for_model(model);
  s.hidden = scorer_hidden;
  return s;
}

TrainConfig default_config() {
  TrainConfig cfg;
  cfg.trajectory.T = 16;
  cfg.model = model::ModelConfig::for_trajectory(cfg.trajectory);
  cfg.lambda = 0.6;
  cfg.H_train = 20;
  cfg.alpha = 0.1;
  cfg.scorer_update_period = 100;
  return cfg;
}

std::string config_to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["T"] = cfg.trajectory.T;
  j["d_theta"] = cfg.trajectory.d_theta;
  j["d_beta"] = cfg.trajectory.d_beta;
  j["m"] = cfg.trajectory.m;
  j["obs_noise_sigma"] = cfg.trajectory.obs_noise_sigma;
  j["occlusion_rate"] = cfg.trajectory.occlusion_rate;
  j["num_harmonics"] = cfg.trajectory.num_harmonics;
  j["mask_ratio"] = cfg.model.mask_ratio;
  j["local_window"] = cfg.model.local_window;
  j["d_embed"] = cfg.model.d_embed;
  j["frame_hidden"] = cfg.model.frame_hidden;
  j["global_hidden"] = cfg.model.global_hidden;
  j["temporal_hidden"] = cfg.model.temporal_hidden;
  j["local_hidden"] = cfg.model.local_hidden;
  j["dropout_rate"] = cfg.model.dropout_rate;
  j["scorer_hidden"] = cfg.scorer_hidden;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["weight_decay"] = cfg.weight_decay;
  j["lambda"] = cfg.lambda;
  j["H_train"] = cfg.H_train;
  j["scorer_update_period"] = cfg.scorer_update_period;
  j["scorer_steps_per_update"] = cfg.scorer_steps_per_update;
  j["scorer_batch"] = cfg.scorer_batch;
  j["scorer_lr"] = cfg.scorer_lr;
  j["seed"] = cfg.seed;
  j["world_seed"] = cfg.world_seed;
  j["n_train"] = cfg.n_train;
  j["n_cal"] = cfg.n_cal;
  j["n_test"] = cfg.n_test;
  j["alpha"] = cfg.alpha;
  j["corruption_sigma"] = cfg.corruption_sigma;
  return j.dump(2) + "\n";
}

TrainConfig config_from_json(const std::string& text, TrainConfig base) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed config JSON: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("config JSON must be an object");
  TrainConfig cfg = base;
  const std::set<std::string> known = {
      "T", "d_theta", "d_beta", "m", "obs_noise_sigma", "occlusion_rate", "num_harmonics", "mask_ratio",
      "local_window", "d_embed", "frame_hidden", "global_hidden", "temporal_hidden", "local_hidden", "dropout_rate",
      "scorer_hidden", "epochs", "batch_size", "lr", "weight_decay", "lambda", "H_train", "scorer_update_period",
      "scorer_steps_per_update", "scorer_batch", "scorer_lr", "seed", "world_seed", "n_train", "n_cal", "n_test",
      "alpha", "corruption_sigma"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw UsageError("unknown config key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("T", cfg.trajectory.T);
    get("d_theta", cfg.trajectory.d_theta);
    get("d_beta", cfg.trajectory.d_beta);
    get("m", cfg.trajectory.m);
    get("obs_noise_sigma", cfg.trajectory.obs_noise_sigma);
    get("occlusion_rate", cfg.trajectory.occlusion_rate);
    get("num_harmonics", cfg.trajectory.num_harmonics);
    const auto hidden = cfg.model;
    cfg.model = model::ModelConfig::for_trajectory(cfg.trajectory);
    cfg.model.mask_ratio = hidden.mask_ratio;
    cfg.model.local_window = hidden.local_window;
    cfg.model.d_embed = hidden.d_embed;
    cfg.model.frame_hidden = hidden.frame_hidden;
    cfg.model.global_hidden = hidden.global_hidden;
    cfg.model.temporal_hidden = hidden.temporal_hidden;
    cfg.model.local_hidden = hidden.local_hidden;
    cfg.model.dropout_rate = hidden.dropout_rate;
    get("mask_ratio", cfg.model.mask_ratio);
    get("local_window", cfg.model.local_window);
    get("d_embed", cfg.model.d_embed);
    get("frame_hidden", cfg.model.frame_hidden);
    get("global_hidden", cfg.model.global_hidden);
    get("temporal_hidden", cfg.model.temporal_hidden);
    get("local_hidden", cfg.model.local_hidden);
    get("dropout_rate", cfg.model.dropout_rate);
    get("scorer_hidden", cfg.scorer_hidden);
    get("epochs", cfg.epochs);
    get("batch_size", cfg.batch_size);
    get("lr", cfg.lr);
    get("weight_decay", cfg.weight_decay);
    get("lambda", cfg.lambda);
    get("H_train", cfg.H_train);
    get("scorer_update_period", cfg.scorer_update_period);
    get("scorer_steps_per_update", cfg.scorer_steps_per_update);
    get("scorer_batch", cfg.scorer_batch);
    get("scorer_lr", cfg.scorer_lr);
    get("seed", cfg.seed);
    get("world_seed", cfg.world_seed);
    get("n_train", cfg.n_train);
    get("n_cal", cfg.n_cal);
    get("n_test", cfg.n_test);
    get("alpha", cfg.alpha);
    get("corruption_sigma", cfg.corruption_sigma);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RngStream data_stream(std::uint64_t seed) { return RngStream(seed).split(kData); }

DataSplits make_splits(const TrainConfig& cfg) {
  cfg.validate();
  synth::RegimeChain chain(cfg.trajectory, cfg.world_seed, 0.0);
  const RngStream data = data_stream(cfg.seed);
  DataSplits d;
  synth::StreamSpec s;
  s.n = cfg.n_train;
  d.train = synth::gen_stream(s, chain, data);
  s.first_episode_id = cfg.n_train;
  s.n = cfg.n_cal;
  d.cal = synth::gen_stream(s, chain, data);
  s.first_episode_id = cfg.n_train + cfg.n_cal;
  s.n = cfg.n_test;
  d.test = synth::gen_stream(s, chain, data);
  return d;
}

TrainResult train(const TrainConfig& cfg, const DataSplits& data, const ProgressFn& progress) {
  cfg.validate();
  if (data.train.empty()) throw UsageError("empty training split");
  check_disjoint(data);

  const RngStream root(cfg.seed);
  RngStream init = root.split(kInit), batches = root.split(kBatches), noise = root.split(kModelNoise),
            scorer_rng = root.split(kScorer);
  TrainResult out;
  out.model = model::init_params(cfg.model, init);
  out.scorer = duf::init_scorer(cfg.scorer_config(), init);

  Adam est_opt({.lr = cfg.lr, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = cfg.weight_decay});
  Adam scorer_opt({.lr = cfg.scorer_lr});
  ReplayBuffer buffer;
  buffer.capacity = cfg.scorer_update_period * cfg.batch_size;
  std::set<std::size_t> touched;

  const std::size_t iters = cfg.iterations();
  const std::size_t B = std::min(cfg.batch_size, data.train.size()), H = cfg.H_train;
  for (std::size_t it = 0; it < iters; ++it) {
    try {
      std::vector<const synth::Episode*> batch;
      for (std::size_t b = 0; b < B; ++b) {
        batch.push_back(&data.train[batches.below(data.train.size())]);
        touched.insert(batch.back()->episode_id);
      }
      const Tensor targets = repeat_each(model::stack_targets(batch), H);

      ad::Tape tape;
      const auto g = model::forward_graph(tape, out.model, cfg.model,
                                          repeat_each(model::stack_observations(batch), H), model::Mode::train, noise);
      auto l_task = model::loss_task(g.y_final, tape.constant(targets), cfg.model.T);

      const auto& phi = g.phi_gl.value();
      const auto& y = g.y_final.value();
      const std::size_t de = phi.cols(), od = y.cols();
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t r = b * H + scorer_rng.below(H);
        auto row = [r](const Tensor& t, std::size_t w) {
          auto s = t.data().subspan(r * w, w);
          return std::vector<double>(s.begin(), s.end());
        };
        buffer.push(row(phi, de), row(y, od), row(targets, od));
      }
      if (cfg.lambda > 0.0 && it % cfg.scorer_update_period == 0) {
        scorer_update(cfg, out.scorer, scorer_opt, buffer, scorer_rng);
      }

      const auto s_pred = duf::score_graph(tape, out.scorer, g.phi_gl, g.y_final).score;
      const auto s_gt = duf::score_graph(tape, out.scorer, ad::detach(g.phi_gl), tape.constant(targets)).score;
      auto l_adv = duf::loss_adv(s_pred);
      const double l_score = duf::loss_score(s_gt.value().data(), s_pred.value().data());

      auto objective = cfg.lambda > 0.0 ? ad::add(l_task, ad::scale(l_adv, cfg.lambda)) : l_task;
      const double lr = 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(it) / iters));
      est_opt.step(out.model, tape.backward(objective, out.model), lr);

      LogRow row;
      row.step = it;
      row.l_task = l_task.value().item();
      row.l_score = l_score;
      row.l_adv = l_adv.value().item();
      row.l_net = duf::loss_total(row.l_task, row.l_score, row.l_adv, cfg.lambda);
      out.log.push_back(row);
      if (progress) progress(row);
    } catch (const NumericError& e) {
      throw NumericError("training step " + std::to_string(it) + ": " + e.what());
    }
  }
  out.touched_ids.assign(touched.begin(), touched.end());
  return out;
}

std::string log_to_csv(const std::vector<LogRow>& log) {
  std::ostringstream os;
  os << "step,l_task,l_score,l_adv,l_net\n";
  for (const auto& r : log) {
    os << r.step << ',' << format_double(r.l_task) << ',' << format_double(r.l_score) << ',' << format_double(r.l_adv)
       << ',' << format_double(r.l_net) << '\n';
  }
  return os.str();
}

double auroc(std::span<const double> negatives, std::span<const double> positives) {
  if (negatives.empty() || positives.empty()) throw UsageError("auroc needs both classes");
  std::vector<double> neg(negatives.begin(), negatives.end());
  std::sort(neg.begin(), neg.end());
  long double wins = 0.0L;
  for (double p : positives) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
    const auto hi = std::upper_bound(lo, neg.end(), p);
    wins += static_cast<long double>(lo - neg.begin()) + 0.5L * static_cast<long double>(hi - lo);
  }
  return static_cast<double>(wins / (static_cast<long double>(neg.size()) * positives.size()));
}

double task_error(const PoseShapeOutput& pred, const PoseShapeOutput& target) {
  if (!(pred.theta.shape() == target.theta.shape())) throw DimensionError("theta blocks differ in shape");
  const std::size_t d = pred.theta.rows(), T = pred.theta.cols();
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double e = pred.theta.at(i, t) - target.theta.at(i, t);
      s += e * e;
    }
    total += std::sqrt(s);
  }
  return total / static_cast<double>(T);
}

EvalReport evaluate(const TrainConfig& cfg, const ParamStore& model_params, const ParamStore& scorer,
                    const std::vector<synth::Episode>& test, RngStream& rng) {
  if (test.empty()) throw UsageError("empty test set");
  std::vector<const synth::Episode*> ptrs;
  for (const auto& e : test) ptrs.push_back(&e);
  RngStream unused(0);
  const auto fwd = model::forward_batch(ptrs, cfg.model, model_params, unused, model::Mode::eval);

  Tensor phi({test.size(), cfg.model.d_embed}), gt({test.size(), cfg.model.output_dim()}),
      bad({test.size(), cfg.model.output_dim()});
  EvalReport r;
  for (std::size_t i = 0; i < test.size(); ++i) {
    r.task_error += task_error(fwd[i].y_final, test[i].target);
    const auto p = fwd[i].phi_gl.data();
    std::copy(p.begin(), p.end(), phi.data().begin() + i * cfg.model.d_embed);
    const auto y = test[i].target.flatten();
    std::copy(y.begin(), y.end(), gt.data().begin() + i * y.size());
    const auto c = synth::corrupt_output(test[i].target, cfg.corruption_sigma, rng).flatten();
    std::copy(c.begin(), c.end(), bad.data().begin() + i * c.size());
  }
  r.task_error /= static_cast<double>(test.size());
  std::vector<double> s_gt, s_bad;
  for (const auto& d : duf::score_rows(phi, gt, scorer)) s_gt.push_back(d.score);
  for (const auto& d : duf::score_rows(phi, bad, scorer)) s_bad.push_back(d.score);
  for (std::size_t i = 0; i < test.size(); ++i) {
    r.mean_score_gt += s_gt[i] / static_cast<double>(test.size());
    r.mean_score_corrupted += s_bad[i] / static_cast<double>(test.size());
  }
  r.score_separation = r.mean_score_corrupted - r.mean_score_gt;
  r.auroc = auroc(s_gt, s_bad);
  return r;
}

std::vector<AblationRow> ablate_H(const TrainConfig& cfg, const std::vector<std::size_t>& H_values,
                                  const std::vector<std::uint64_t>& seeds) {
  if (H_values.empty() || seeds.empty()) throw UsageError("ablation needs at least one H value and one seed");
  std::vector<AblationRow> rows;
  for (std::size_t H : H_values) {
    for (std::uint64_t seed : seeds) {
      TrainConfig c = cfg;
      c.H_train = H;
      c.seed = seed;
      const auto data = make_splits(c);
      const auto result = train(c, data);
      RngStream rng = RngStream(seed).split(kData + 1);
      rows.push_back({H, seed, evaluate(c, result.model, result.scorer, data.test, rng).task_error});
    }
  }
  return rows;
}

std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "H,seed,task_error\n";
  for (const auto& r : rows) os << r.H << ',' << r.seed << ',' << format_double(r.task_error) << '\n';
  return os.str();
}

std::vector<CoverageRow> coverage_experiment(const TrainConfig& cfg, const ParamStore& model_params,
                                             const ParamStore& scorer, const CoverageSpec& spec,
                                             const std::vector<std::uint64_t>& seeds) {
  cfg.validate();
  if (spec.n_cal < 1 || spec.n_test < 1) throw ParameterError("coverage needs n_cal >= 1 and n_test >= 1");
  if (spec.schemes.empty()) throw UsageError("coverage needs at least one scheme");
  synth::RegimeChain chain(cfg.trajectory, cfg.world_seed, spec.shift);
  std::vector<CoverageRow> rows;
  for (auto seed : seeds) {
    const RngStream data = RngStream(seed).split(kCoverage);
    synth::StreamSpec cs;
    cs.mode = spec.mode;
    cs.segment_length = spec.segment_length;
    cs.n = spec.n_cal;
    const auto cal = synth::gen_stream(cs, chain, data);
    synth::StreamSpec ts;
    ts.n = spec.n_test;
    ts.base_regime = cal.back().regime_id;
    ts.first_episode_id = spec.n_cal;
    const auto test = synth::gen_stream(ts, chain, data);

    const auto examples = conformal::calibration_examples(cal, cfg.model, model_params, scorer);
    const auto scores = conformal::ground_truth_scores(test, cfg.model, model_params, scorer);
    for (auto scheme : spec.schemes) {
      const auto c = conformal::calibrate(examples, spec.alpha, scheme, spec.rho, spec.temperature, seed);
      rows.push_back({seed, scheme, conformal::coverage_from_scores(scores, c).coverage, spec.n_test});
    }
  }
  return rows;
}

double mean_coverage(const std::vector<CoverageRow>& rows, conformal::Scheme scheme) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.scheme != scheme) continue;
    sum += r.coverage;
    ++n;
  }
  if (n == 0) throw UsageError("no coverage rows for scheme " + conformal::to_string(scheme));
  return sum / static_cast<double>(n);
}

std::string coverage_to_csv(const std::vector<CoverageRow>& rows) {
  std::ostringstream os;
  os << "seed,scheme,coverage,n_test\n";
  std::vector<conformal::Scheme> order;
  for (const auto& r : rows) {
    os << r.seed << ',' << conformal::to_string(r.scheme) << ',' << format_double(r.coverage) << ',' << r.n_test << '\n';
    if (std::find(order.begin(), order.end(), r.scheme) == order.end()) order.push_back(r.scheme);
  }
  for (auto scheme : order) {
    std::vector<double> v;
    std::size_t n_test = 0;
    for (const auto& r : rows) {
      if (r.scheme != scheme) continue;
      v.push_back(r.coverage);
      n_test = r.n_test;
    }
    const double mean = mean_coverage(rows, scheme);
    double var = 0.0;
    for (double c : v) var += (c - mean) * (c - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    const auto name = conformal::to_string(scheme);
    os << "mean," << name << ',' << format_double(mean) << ',' << n_test << '\n';
    os << "std," << name << ',' << format_double(sd) << ',' << n_test << '\n';
  }
  return os.str();
}

}  // namespace ducp::pipeline
