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
#include "ducp/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ducp/bounds.hpp"
#include "ducp/conformal.hpp"
#include "ducp/error.hpp"
#include "ducp/pipeline.hpp"
#include "ducp/text.hpp"

namespace ducp::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

class VerificationFailure : public Error {
 public:
  using Error::Error;
};

const std::vector<std::string> kGlobalFlags{"--seed", "--out-dir", "--config", "--world-seed"};

struct Globals {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::string config;
  std::optional<std::uint64_t> world_seed;
};

class Context {
 public:
  Context(const Globals& g, std::vector<std::string> argv, std::ostream& out) : g(g), argv(std::move(argv)), out(out) {}

  const Globals& g;
  std::vector<std::string> argv;
  std::ostream& out;
  json config = nullptr;

  std::string read_input(const std::string& path) {
    auto text = read_file(path);
    inputs_.push_back({{"path", path}, {"sha256", sha256_hex(text)}});
    return text;
  }

  void emit(const std::string& name, const std::string& contents) { outputs_.emplace_back(name, contents); }

  /// Writes every emitted file and the manifest into the output directory.
  void finish(const std::string& command) {
    fs::create_directories(g.out_dir);
    json outputs = json::array();
    for (const auto& [name, contents] : outputs_) {
      write_file((fs::path(g.out_dir) / name).string(), contents);
      outputs.push_back({{"path", name}, {"sha256", sha256_hex(contents)}});
    }
    json m;
    m["command"] = command;
    m["argv"] = argv;
    m["seed"] = g.seed;
    m["config"] = config;
    m["inputs"] = inputs_;
    m["outputs"] = outputs;
    m["version"] = kVersion;
    write_file((fs::path(g.out_dir) / "manifest.json").string(), m.dump(2) + "\n");
  }

 private:
  json inputs_ = json::array();
  std::vector<std::pair<std::string, std::string>> outputs_;
};

// Subcommand arguments with the global flags removed, followed by the resolved global values.
std::vector<std::string> canonical_argv(const std::vector<std::string>& args, const Globals& g) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& a = args[i];
    bool global = false;
    for (const auto& flag : kGlobalFlags) {
      if (a == flag) {
        global = true;
        ++i;
      } else if (a.rfind(flag + "=", 0) == 0) {
        global = true;
      }
    }
    if (!global) out.push_back(a);
  }
  out.insert(out.end(), {"--seed", std::to_string(g.seed)});
  if (g.world_seed) out.insert(out.end(), {"--world-seed", std::to_string(*g.world_seed)});
  if (!g.config.empty()) out.insert(out.end(), {"--config", g.config});
  return out;
}

pipeline::TrainConfig resolve_config(Context& ctx) {
  auto cfg = pipeline::default_config();
  if (!ctx.g.config.empty()) cfg = pipeline::config_from_json(ctx.read_input(ctx.g.config), cfg);
  if (ctx.g.world_seed) cfg.world_seed = *ctx.g.world_seed;
  cfg.validate();
  return cfg;
}

std::vector<synth::Episode> load_episodes(Context& ctx, const std::string& path, const pipeline::TrainConfig& cfg) {
  auto eps = synth::episodes_from_csv(ctx.read_input(path));
  if (eps.empty()) throw UsageError("no episodes in '" + path + "'");
  const auto& t = cfg.trajectory;
  for (const auto& e : eps) {
    if (e.observations.rows() != t.T || e.observations.cols() != t.m || e.target.d_theta() != t.d_theta ||
        e.target.d_beta() != t.d_beta || e.target.frames() != t.T) {
      throw UsageError("episode " + std::to_string(e.episode_id) + " in '" + path +
                       "' does not match the configured T, m, d_theta, d_beta");
    }
  }
  return eps;
}

struct Run {
  pipeline::TrainConfig cfg;
  ParamStore model;
  ParamStore scorer;
};

Run load_run(Context& ctx, const std::string& dir) {
  Run r;
  r.cfg = pipeline::config_from_json(ctx.read_input((fs::path(dir) / "config.json").string()));
  if (ctx.g.world_seed) r.cfg.world_seed = *ctx.g.world_seed;
  r.model = params_from_json(ctx.read_input((fs::path(dir) / "model.json").string()));
  r.scorer = params_from_json(ctx.read_input((fs::path(dir) / "scorer.json").string())).with_prefix_stripped("scorer.");
  ctx.config = json::parse(pipeline::config_to_json(r.cfg));
  return r;
}

json number_or_inf(double v) { return v == conformal::kInf ? json("inf") : json(v); }

json tensor_rows(const Tensor& t) {
  json rows = json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < t.cols(); ++c) row.push_back(t.at(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const std::map<std::string, synth::StreamMode> kModes{{"iid", synth::StreamMode::iid},
                                                       {"changepoint", synth::StreamMode::changepoint}};
const std::map<std::string, conformal::Scheme> kSchemes{{"uniform", conformal::Scheme::uniform},
                                                         {"feature_decay", conformal::Scheme::feature_decay},
                                                         {"recency_decay", conformal::Scheme::recency_decay}};

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int replay(const std::string& manifest_path, const Globals& g, std::ostream& out, std::ostream& err) {
  const auto m = json::parse(read_file(manifest_path));
  if (!m.contains("argv") || !m.contains("outputs")) throw UsageError("'" + manifest_path + "' is not a manifest");
  auto args = m["argv"].get<std::vector<std::string>>();
  args.insert(args.end(), {"--out-dir", g.out_dir});
  std::ostringstream inner_out;
  const int rc = dispatch(args, inner_out, err);
  if (rc != kOk && rc != kVerification) return rc;
  std::size_t same = 0;
  for (const auto& o : m["outputs"]) {
    const auto name = o["path"].get<std::string>();
    const auto hash = sha256_hex(read_file((fs::path(g.out_dir) / name).string()));
    if (hash != o["sha256"].get<std::string>()) throw VerificationFailure("replayed output '" + name + "' differs");
    ++same;
  }
  out << "replay: " << same << " outputs identical\n";
  return rc;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deep uncertainty conformal prediction toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Seed of the command's random stream")->envname("DUCP_SEED");
  app.add_option("--out-dir", g.out_dir, "Directory for outputs and manifest.json")->envname("DUCP_OUT_DIR");
  app.add_option("--config", g.config, "Training config JSON overriding the defaults")->envname("DUCP_CONFIG");
  app.add_option("--world-seed", g.world_seed, "Seed of the regime chain")->envname("DUCP_WORLD_SEED");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic episode stream");
  std::string mode = "iid";
  long long k = 50;
  std::size_t n = 100, base_regime = 0, first_id = 0;
  double shift = 0.0;
  sim->add_option("--mode", mode)->check(CLI::IsMember({"iid", "changepoint"}))->capture_default_str();
  sim->add_option("--n", n)->capture_default_str();
  sim->add_option("--k", k, "Episodes per regime segment")->capture_default_str();
  sim->add_option("--shift", shift, "Regime perturbation scale")->capture_default_str();
  sim->add_option("--base-regime", base_regime)->capture_default_str();
  sim->add_option("--first-id", first_id, "Episode id of the first episode")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train the estimator and the uncertainty scorer");
  std::string train_csv, cal_csv, test_csv;
  tr->add_option("--train", train_csv, "Training episode CSV")->required();
  tr->add_option("--cal", cal_csv, "Calibration episode CSV (checked for overlap)");
  tr->add_option("--test", test_csv, "Test episode CSV (checked for overlap, evaluated)");

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Compute the conformal threshold");
  std::string scores_csv, model_dir, episodes_csv, scheme = "uniform";
  double alpha = 0.1, rho = 0.99, temperature = 1.0;
  cal->add_option("--scores", scores_csv, "CSV of episode_id,score[,raw_weight]");
  cal->add_option("--model-dir", model_dir, "Directory written by train");
  cal->add_option("--episodes", episodes_csv, "Calibration episode CSV");
  cal->add_option("--scheme", scheme)->check(CLI::IsMember({"uniform", "feature_decay", "recency_decay"}))
      ->capture_default_str();
  cal->add_option("--alpha", alpha)->capture_default_str();
  cal->add_option("--rho", rho)->capture_default_str();
  cal->add_option("--temperature", temperature)->capture_default_str();

  // predict
  auto* pred = app.add_subcommand("predict", "Monte-Carlo dropout prediction set for one episode");
  std::string calibration_json;
  long long episode_id = -1;
  std::size_t H = 20;
  pred->add_option("--model-dir", model_dir)->required();
  pred->add_option("--calibration", calibration_json)->required();
  pred->add_option("--episodes", episodes_csv)->required();
  pred->add_option("--episode-id", episode_id)->required();
  pred->add_option("--H", H, "Number of hypotheses")->capture_default_str();

  // coverage
  auto* cov = app.add_subcommand("coverage", "Empirical coverage of the ground truth");
  std::vector<std::string> calibrations;
  std::size_t seeds = 0, n_cal = 500, n_test = 5000;
  bool compare = false;
  cov->add_option("--model-dir", model_dir)->required();
  cov->add_option("--calibration", calibrations, "Calibration JSON (repeatable)");
  cov->add_option("--episodes", episodes_csv, "Test episode CSV for --calibration");
  cov->add_option("--seeds", seeds, "Simulate this many seeds starting at --seed");
  cov->add_option("--mode", mode)->check(CLI::IsMember({"iid", "changepoint"}))->capture_default_str();
  cov->add_option("--k", k)->capture_default_str();
  cov->add_option("--shift", shift)->capture_default_str();
  cov->add_option("--n-cal", n_cal)->capture_default_str();
  cov->add_option("--n-test", n_test)->capture_default_str();
  cov->add_option("--scheme", scheme)->check(CLI::IsMember({"uniform", "feature_decay", "recency_decay"}))
      ->capture_default_str();
  cov->add_option("--alpha", alpha)->capture_default_str();
  cov->add_option("--rho", rho)->capture_default_str();
  cov->add_option("--temperature", temperature)->capture_default_str();
  cov->add_flag("--compare", compare, "Report uniform, recency_decay and feature_decay side by side");

  // bounds
  auto* bnd = app.add_subcommand("bounds", "Check the miscoverage-gap bounds on a grid");
  std::vector<double> n_list{50, 100, 200}, k_list{0, 1, 2, 5, 10}, a1_list{0.25, 0.5, 0.75};
  bnd->add_option("--n-list", n_list)->delimiter(',')->capture_default_str();
  bnd->add_option("--k-list", k_list)->delimiter(',')->capture_default_str();
  bnd->add_option("--a1-list", a1_list, "a1 as fractions of n")->delimiter(',')->capture_default_str();
  bnd->add_option("--rho", rho)->capture_default_str();

  // ablate
  auto* abl = app.add_subcommand("ablate", "Task error against the number of training hypotheses");
  std::vector<std::size_t> H_list{1, 8};
  std::vector<std::uint64_t> seed_list{0, 1, 2, 3, 4};
  abl->add_option("--H-list", H_list)->delimiter(',')->capture_default_str();
  abl->add_option("--seed-list", seed_list)->delimiter(',')->capture_default_str();

  // replay
  auto* rep = app.add_subcommand("replay", "Re-run a command from its manifest and compare outputs");
  std::string manifest_path;
  rep->add_option("--manifest", manifest_path)->required();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kOk : kUsage;
  }

  if (rep->parsed()) return replay(manifest_path, g, out, err);

  Context ctx(g, canonical_argv(args, g), out);

  if (sim->parsed()) {
    const auto cfg = resolve_config(ctx);
    ctx.config = json::parse(pipeline::config_to_json(cfg));
    synth::StreamSpec s;
    s.mode = kModes.at(mode);
    s.segment_length = k;
    s.n = n;
    s.base_regime = base_regime;
    s.first_episode_id = first_id;
    if (n < 1) throw UsageError("--n must be >= 1");
    synth::RegimeChain chain(cfg.trajectory, cfg.world_seed, shift);
    const auto eps = synth::gen_stream(s, chain, pipeline::data_stream(g.seed));
    ctx.emit("episodes.csv", synth::episodes_to_csv(eps));
    ctx.finish("simulate");
    out << "wrote " << eps.size() << " episodes\n";
    return kOk;
  }

  if (tr->parsed()) {
    auto cfg = resolve_config(ctx);
    cfg.seed = g.seed;
    pipeline::DataSplits data;
    data.train = load_episodes(ctx, train_csv, cfg);
    cfg.n_train = data.train.size();
    if (!cal_csv.empty()) {
      data.cal = load_episodes(ctx, cal_csv, cfg);
      cfg.n_cal = data.cal.size();
    }
    if (!test_csv.empty()) {
      data.test = load_episodes(ctx, test_csv, cfg);
      cfg.n_test = data.test.size();
    }
    ctx.config = json::parse(pipeline::config_to_json(cfg));
    const auto result = pipeline::train(cfg, data);
    ParamStore scorer;
    scorer.merge(result.scorer, "scorer.");
    ctx.emit("model.json", params_to_json(result.model));
    ctx.emit("scorer.json", params_to_json(scorer));
    ctx.emit("config.json", pipeline::config_to_json(cfg));
    ctx.emit("train_log.csv", pipeline::log_to_csv(result.log));
    if (!data.test.empty()) {
      RngStream rng = pipeline::data_stream(cfg.seed).split(1);
      const auto r = pipeline::evaluate(cfg, result.model, result.scorer, data.test, rng);
      json e;
      e["task_error"] = r.task_error;
      e["mean_score_gt"] = r.mean_score_gt;
      e["mean_score_corrupted"] = r.mean_score_corrupted;
      e["score_separation"] = r.score_separation;
      e["auroc"] = r.auroc;
      ctx.emit("eval.json", e.dump(2) + "\n");
      out << "auroc " << format_double(r.auroc) << " separation " << format_double(r.score_separation) << '\n';
    }
    ctx.finish("train");
    out << "trained " << result.log.size() << " iterations, final l_task " << format_double(result.log.back().l_task)
        << '\n';
    return kOk;
  }

  if (cal->parsed()) {
    std::vector<conformal::CalibrationExample> examples;
    if (!scores_csv.empty()) {
      if (!model_dir.empty() || !episodes_csv.empty()) throw UsageError("use either --scores or --model-dir/--episodes");
      examples = conformal::examples_from_csv(ctx.read_input(scores_csv));
    } else {
      if (model_dir.empty() || episodes_csv.empty()) throw UsageError("calibrate needs --scores or --model-dir with --episodes");
      const auto run = load_run(ctx, model_dir);
      const auto eps = load_episodes(ctx, episodes_csv, run.cfg);
      examples = conformal::calibration_examples(eps, run.cfg.model, run.model, run.scorer);
      ctx.emit("scores.csv", conformal::examples_to_csv(examples));
    }
    if (examples.empty()) throw UsageError("empty calibration input");
    const auto result = conformal::calibrate(examples, alpha, kSchemes.at(scheme), rho, temperature, g.seed);
    ctx.emit("calibration.json", conformal::calibration_to_json(result));
    ctx.finish("calibrate");
    out << "tau_star " << (result.tau_star == conformal::kInf ? std::string("inf") : format_double(result.tau_star))
        << '\n';
    return kOk;
  }

  if (pred->parsed()) {
    const auto run = load_run(ctx, model_dir);
    const auto calib = conformal::calibration_from_json(ctx.read_input(calibration_json));
    const auto eps = load_episodes(ctx, episodes_csv, run.cfg);
    const auto it = std::find_if(eps.begin(), eps.end(), [&](const synth::Episode& e) {
      return static_cast<long long>(e.episode_id) == episode_id;
    });
    if (it == eps.end()) throw UsageError("unknown episode id " + std::to_string(episode_id));
    RngStream rng(g.seed);
    const auto set = conformal::mc_dropout_set(*it, H, calib, run.cfg.model, run.model, run.scorer, rng);
    json j;
    j["episode_id"] = episode_id;
    j["H"] = H;
    j["tau_star"] = number_or_inf(set.tau_star);
    j["members"] = set.members().size();
    j["hypotheses"] = json::array();
    for (const auto& h : set.hypotheses) {
      j["hypotheses"].push_back(
          {{"score", h.score}, {"member", h.member}, {"theta", tensor_rows(h.output.theta)}, {"beta", tensor_rows(h.output.beta)}});
    }
    ctx.emit("prediction_set.json", j.dump(2) + "\n");
    ctx.finish("predict");
    out << set.members().size() << " of " << set.hypotheses.size() << " hypotheses in the set\n";
    return kOk;
  }

  if (cov->parsed()) {
    const auto run = load_run(ctx, model_dir);
    std::vector<pipeline::CoverageRow> rows;
    if (!calibrations.empty()) {
      if (episodes_csv.empty()) throw UsageError("--calibration needs --episodes");
      const auto test = load_episodes(ctx, episodes_csv, run.cfg);
      const auto scores = conformal::ground_truth_scores(test, run.cfg.model, run.model, run.scorer);
      for (const auto& path : calibrations) {
        const auto c = conformal::calibration_from_json(ctx.read_input(path));
        rows.push_back({g.seed, c.scheme, conformal::coverage_from_scores(scores, c).coverage, test.size()});
      }
    } else if (seeds > 0) {
      pipeline::CoverageSpec spec;
      spec.mode = kModes.at(mode);
      spec.segment_length = k;
      spec.shift = shift;
      spec.n_cal = n_cal;
      spec.n_test = n_test;
      spec.alpha = alpha;
      spec.rho = rho;
      spec.temperature = temperature;
      spec.schemes = compare ? std::vector<conformal::Scheme>{conformal::Scheme::uniform, conformal::Scheme::recency_decay,
                                                              conformal::Scheme::feature_decay}
                             : std::vector<conformal::Scheme>{kSchemes.at(scheme)};
      std::vector<std::uint64_t> list;
      for (std::size_t i = 0; i < seeds; ++i) list.push_back(g.seed + i);
      rows = pipeline::coverage_experiment(run.cfg, run.model, run.scorer, spec, list);
    } else {
      throw UsageError("coverage needs --calibration with --episodes, or --seeds");
    }
    const auto csv = pipeline::coverage_to_csv(rows);
    ctx.emit("coverage.csv", csv);
    ctx.finish("coverage");
    for (const auto& line : split(csv, '\n')) {
      if (line.rfind("mean,", 0) == 0) out << line << '\n';
    }
    return kOk;
  }

  if (bnd->parsed()) {
    const auto cfg_json = json{{"n_list", n_list}, {"k_list", k_list}, {"a1_list", a1_list}, {"rho", rho}};
    ctx.config = cfg_json;
    if (!(rho > 0.0 && rho <= 1.0)) throw UsageError("--rho must lie in (0, 1]");
    const auto rows = bounds::bound_grid(n_list, k_list, a1_list, rho);
    ctx.emit("bounds.csv", bounds::grid_to_csv(rows));
    ctx.finish("bounds");
    const auto failed = std::count_if(rows.begin(), rows.end(), [](const bounds::GridRow& r) { return !r.holds; });
    out << rows.size() - static_cast<std::size_t>(failed) << " of " << rows.size() << " grid cells hold\n";
    if (failed > 0) throw VerificationFailure(std::to_string(failed) + " grid cells violate a bound");
    return kOk;
  }

  if (abl->parsed()) {
    const auto cfg = resolve_config(ctx);
    ctx.config = json::parse(pipeline::config_to_json(cfg));
    const auto rows = pipeline::ablate_H(cfg, H_list, seed_list);
    ctx.emit("ablation.csv", pipeline::ablation_to_csv(rows));
    ctx.finish("ablate");
    for (auto h : H_list) {
      std::vector<double> errs;
      for (const auto& r : rows)
        if (r.H == h) errs.push_back(r.task_error);
      out << "H " << h << " median task error " << format_double(median(errs)) << '\n';
    }
    return kOk;
  }
  return kUsage;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const VerificationFailure& e) {
    err << "verification failed: " << e.what() << '\n';
    return kVerification;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const DomainError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON: " << e.what() << '\n';
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
}

}  // namespace ducp::cli
