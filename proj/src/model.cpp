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
#include "ducp/model.hpp"

#include <algorithm>

#include <cmath>
#include <json.hpp>

#include "ducp/error.hpp"

namespace ducp::model {

ModelConfig ModelConfig::for_trajectory(const synth::TrajectorySpec& spec) {
  ModelConfig cfg;
  cfg.T = spec.T;
  cfg.m = spec.m;
  cfg.d_theta = spec.d_theta;
  cfg.d_beta = spec.d_beta;
  if (cfg.window_frames() > cfg.T) cfg.local_window = (cfg.T - 1) / 2;
  return cfg;
}

std::size_t ModelConfig::masked_frames() const {
  return static_cast<std::size_t>(std::ceil(mask_ratio * static_cast<double>(T) - 1e-12));
}

std::size_t ModelConfig::window_start() const {
  const std::size_t centred = T / 2 - local_window;
  return std::min(centred, T - window_frames());
}

void ModelConfig::validate() const {
  if (T < 2 || m < 1 || d_theta < 1 || d_beta < 1) throw ParameterError("model dimensions must be positive, T >= 2");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ParameterError("mask_ratio must lie in [0, 1)");
  if (local_window < 1 || local_window > T / 2 || window_frames() > T) {
    throw ParameterError("local_window must satisfy 1 <= w and 2w+1 <= T");
  }
  if (frame_hidden < 1 || global_hidden < 1 || temporal_hidden < 1 || local_hidden < 1) {
    throw ParameterError("layer widths must be positive");
  }
  if (d_embed <= frame_hidden) throw ParameterError("d_embed must exceed frame_hidden");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ParameterError("dropout_rate must lie in [0, 1)");
}

std::string config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["T"] = c.T;
  j["m"] = c.m;
  j["d_theta"] = c.d_theta;
  j["d_beta"] = c.d_beta;
  j["mask_ratio"] = c.mask_ratio;
  j["local_window"] = c.local_window;
  j["d_embed"] = c.d_embed;
  j["frame_hidden"] = c.frame_hidden;
  j["global_hidden"] = c.global_hidden;
  j["temporal_hidden"] = c.temporal_hidden;
  j["local_hidden"] = c.local_hidden;
  j["dropout_rate"] = c.dropout_rate;
  return j.dump(2) + "\n";
}

ModelConfig config_from_json(const std::string& text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.T = j.value("T", c.T);
    c.m = j.value("m", c.m);
    c.d_theta = j.value("d_theta", c.d_theta);
    c.d_beta = j.value("d_beta", c.d_beta);
    c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
    c.local_window = j.value("local_window", c.local_window);
    c.d_embed = j.value("d_embed", c.d_embed);
    c.frame_hidden = j.value("frame_hidden", c.frame_hidden);
    c.global_hidden = j.value("global_hidden", c.global_hidden);
    c.temporal_hidden = j.value("temporal_hidden", c.temporal_hidden);
    c.local_hidden = j.value("local_hidden", c.local_hidden);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

// Column c = d * T + t of the output layout reads frame-major column t * D + d.
std::vector<std::size_t> frame_major_to_blocks(std::size_t T, std::size_t D) {
  std::vector<std::size_t> src(T * D);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t t = 0; t < T; ++t) src[d * T + t] = t * D + d;
  return src;
}

// [W*f x f] matrix averaging W consecutive f-wide frame blocks.
Tensor window_pooling(std::size_t W, std::size_t f) {
  Tensor pool({W * f, f});
  for (std::size_t t = 0; t < W; ++t)
    for (std::size_t j = 0; j < f; ++j) pool.at(t * f + j, j) = 1.0 / static_cast<double>(W);
  return pool;
}

Tensor init_weight(std::size_t fan_in, std::size_t fan_out, double gain, RngStream& rng) {
  Tensor w({fan_in, fan_out});
  const double sd = gain / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : w.data()) v = sd * rng.normal();
  return w;
}

void add_layer(ParamStore& ps, const std::string& w, const std::string& b, std::size_t in, std::size_t out,
               double gain, RngStream& rng) {
  ps.add(w, init_weight(in, out, gain, rng));
  ps.add(b, Tensor({out}, 0.0));
}

std::vector<bool> draw_mask(std::size_t frames, std::size_t hidden, RngStream& rng) {
  // Partial Fisher-Yates: `hidden` distinct frames, uniformly.
  std::vector<std::size_t> idx(frames);
  for (std::size_t i = 0; i < frames; ++i) idx[i] = i;
  std::vector<bool> mask(frames, false);
  for (std::size_t i = 0; i < hidden; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(frames - i));
    std::swap(idx[i], idx[j]);
    mask[idx[i]] = true;
  }
  return mask;
}

ad::Var maybe_dropout(ad::Var h, double rate, bool active, RngStream& rng) {
  if (!active || rate == 0.0) return h;
  return ad::apply_mask(h, dropout_mask(h.shape(), rate, rng));
}

PoseShapeOutput row_output(const Tensor& rows, std::size_t r, const ModelConfig& cfg) {
  const std::size_t w = rows.cols();
  return PoseShapeOutput::from_flat(rows.data().subspan(r * w, w), cfg.d_theta, cfg.d_beta, cfg.T);
}

}  // namespace

ParamStore init_params(const ModelConfig& cfg, RngStream& rng) {
  cfg.validate();
  const double relu_gain = std::sqrt(2.0);
  ParamStore ps;
  add_layer(ps, "enc.w", "enc.b", cfg.m, cfg.frame_hidden, relu_gain, rng);
  ps.add("placeholder", Tensor({cfg.frame_hidden}, 0.0));
  add_layer(ps, "glob.w1", "glob.b1", cfg.T * cfg.frame_hidden, cfg.global_hidden, relu_gain, rng);
  add_layer(ps, "glob.wf", "glob.bf", cfg.frame_hidden, cfg.d_theta + cfg.d_beta, 1.0, rng);
  add_layer(ps, "glob.wt1", "glob.bt1", 2 * cfg.T, cfg.temporal_hidden, relu_gain, rng);
  add_layer(ps, "glob.wt2", "glob.bt2", cfg.temporal_hidden, cfg.T, 0.1, rng);
  add_layer(ps, "glob.wy", "glob.by", cfg.global_hidden, cfg.output_dim(), 1.0, rng);
  add_layer(ps, "glob.wg", "glob.bg", cfg.global_hidden, cfg.global_embed(), 1.0, rng);
  add_layer(ps, "loc.w1", "loc.b1", cfg.window_frames() * cfg.frame_hidden + cfg.global_embed(), cfg.local_hidden,
            relu_gain, rng);
  add_layer(ps, "loc.wy", "loc.by", cfg.local_hidden, cfg.output_dim(), 0.1, rng);
  return ps;
}

Tensor stack_observations(const std::vector<const synth::Episode*>& episodes) {
  if (episodes.empty()) throw UsageError("no episodes to stack");
  const std::size_t width = episodes.front()->observations.size();
  std::vector<double> data;
  data.reserve(width * episodes.size());
  for (const auto* ep : episodes) {
    if (ep->observations.size() != width) throw DimensionError("episodes have different observation shapes");
    data.insert(data.end(), ep->observations.data().begin(), ep->observations.data().end());
  }
  return Tensor({episodes.size(), width}, std::move(data));
}

Tensor stack_targets(const std::vector<const synth::Episode*>& episodes) {
  if (episodes.empty()) throw UsageError("no episodes to stack");
  std::vector<double> data;
  std::size_t width = 0;
  for (const auto* ep : episodes) {
    auto flat = ep->target.flatten();
    if (width == 0) width = flat.size();
    if (flat.size() != width) throw DimensionError("episodes have different target shapes");
    data.insert(data.end(), flat.begin(), flat.end());
  }
  return Tensor({episodes.size(), width}, std::move(data));
}

ForwardGraph forward_graph(ad::Tape& tape, const ParamStore& params, const ModelConfig& cfg,
                           const Tensor& observations, Mode mode, RngStream& rng) {
  if (observations.rank() != 2 || observations.cols() != cfg.T * cfg.m) {
    throw DimensionError("observations " + shape_to_string(observations.shape()) + " do not match [B x " +
                         std::to_string(cfg.T * cfg.m) + "]");
  }
  const std::size_t B = observations.rows();
  const std::size_t T = cfg.T, f = cfg.frame_hidden;
  const bool stochastic = mode != Mode::eval;
  auto p = [&](const char* name) { return tape.param(params, name); };

  // (1) per-frame encoder
  auto frames = tape.constant(observations.reshaped({B * T, cfg.m}));
  auto feats = ad::relu(ad::affine(frames, p("enc.w"), p("enc.b")));

  // (2) random frame mask for the global branch; occluded frames arrive as all-zero rows
  ForwardGraph out;
  out.masks.assign(B, std::vector<bool>(T, false));
  auto global_feats = feats;
  const std::size_t hidden = stochastic ? cfg.masked_frames() : 0;
  std::vector<bool> missing(B * T, false);
  if (hidden > 0) {
    std::vector<bool> replace(B * T, false);
    for (std::size_t b = 0; b < B; ++b) {
      out.masks[b] = draw_mask(T, hidden, rng);
      for (std::size_t t = 0; t < T; ++t) replace[b * T + t] = out.masks[b][t];
    }
    global_feats = ad::replace_rows(feats, replace, p("placeholder"));
    missing = replace;
  }
  const auto obs = observations.data();
  for (std::size_t r = 0; r < B * T; ++r) {
    const auto row = obs.subspan(r * cfg.m, cfg.m);
    if (std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; })) missing[r] = true;
  }

  // (3) global prediction and global embedding
  auto hg = ad::relu(ad::affine(ad::reshape(global_feats, {B, T * f}), p("glob.w1"), p("glob.b1")));
  hg = maybe_dropout(hg, cfg.dropout_rate, stochastic, rng);
  // Shared per-frame readout in the block layout of the outputs, then a temporal MLP per output
  // dimension that sees which frames were missing.
  const std::size_t D = cfg.d_theta + cfg.d_beta;
  auto per_frame = ad::reshape(ad::affine(global_feats, p("glob.wf"), p("glob.bf")), {B, T * D});
  auto tracks = ad::reshape(ad::permute_cols(per_frame, frame_major_to_blocks(T, D)), {B * D, T});
  Tensor flags({B * D, T});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t t = 0; t < T; ++t) flags.at(b * D + d, t) = missing[b * T + t] ? 1.0 : 0.0;
  auto ht = ad::relu(ad::affine(ad::concat_cols(tracks, tape.constant(std::move(flags))), p("glob.wt1"), p("glob.bt1")));
  auto refined = ad::add(tracks, ad::affine(ht, p("glob.wt2"), p("glob.bt2")));
  out.y_global = ad::add(ad::reshape(refined, {B, T * D}), ad::affine(hg, p("glob.wy"), p("glob.by")));
  auto g = ad::tanh(ad::affine(hg, p("glob.wg"), p("glob.bg")));

  // (4) local correction from the centre window plus the global embedding
  auto window = ad::slice_cols(ad::reshape(feats, {B, T * f}), cfg.window_start() * f, cfg.window_frames() * f);
  auto hl = ad::relu(ad::affine(ad::concat_cols(window, g), p("loc.w1"), p("loc.b1")));
  hl = maybe_dropout(hl, cfg.dropout_rate, stochastic, rng);
  out.y_local = ad::affine(hl, p("loc.wy"), p("loc.by"));
  out.phi_gl = ad::concat_cols(ad::matmul(window, tape.constant(window_pooling(cfg.window_frames(), f))), g);

  // (5)
  out.y_final = ad::add(out.y_global, out.y_local);
  return out;
}

std::vector<ForwardResult> forward_batch(const std::vector<const synth::Episode*>& episodes, const ModelConfig& cfg,
                                         const ParamStore& params, RngStream& rng, Mode mode) {
  ad::Tape tape;
  const auto g = forward_graph(tape, params, cfg, stack_observations(episodes), mode, rng);
  std::vector<ForwardResult> out(episodes.size());
  const Tensor& phi = g.phi_gl.value();
  for (std::size_t b = 0; b < episodes.size(); ++b) {
    auto& r = out[b];
    r.y_global = row_output(g.y_global.value(), b, cfg);
    r.y_local_correction = row_output(g.y_local.value(), b, cfg);
    r.y_final = row_output(g.y_final.value(), b, cfg);
    r.phi_gl = Tensor({cfg.d_embed}, std::vector<double>(phi.data().begin() + static_cast<std::ptrdiff_t>(b * cfg.d_embed),
                                                         phi.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * cfg.d_embed)));
    r.mask_used = g.masks[b];
  }
  return out;
}

ForwardResult forward(const Tensor& observations, const ModelConfig& cfg, const ParamStore& params, RngStream& rng,
                      Mode mode) {
  if (observations.shape() != Shape{cfg.T, cfg.m}) {
    throw DimensionError("episode observations " + shape_to_string(observations.shape()) + " do not match [" +
                         std::to_string(cfg.T) + "x" + std::to_string(cfg.m) + "]");
  }
  synth::Episode shell;
  shell.observations = observations;
  return forward_batch({&shell}, cfg, params, rng, mode).front();
}

std::vector<ForwardResult> sample_hypotheses(const Tensor& observations, const ModelConfig& cfg,
                                             const ParamStore& params, std::size_t H, RngStream& rng) {
  if (H < 1) throw ParameterError("need at least one hypothesis");
  if (observations.shape() != Shape{cfg.T, cfg.m}) {
    throw DimensionError("episode observations " + shape_to_string(observations.shape()) + " do not match [" +
                         std::to_string(cfg.T) + "x" + std::to_string(cfg.m) + "]");
  }
  synth::Episode shell;
  shell.observations = observations;
  std::vector<const synth::Episode*> rows(H, &shell);
  return forward_batch(rows, cfg, params, rng, Mode::train);
}

double loss_task(const PoseShapeOutput& pred, const PoseShapeOutput& target) {
  if (pred.theta.shape() != target.theta.shape() || pred.beta.shape() != target.beta.shape()) {
    throw DimensionError("prediction and target shapes differ");
  }
  const auto p = pred.flatten();
  const auto t = target.flatten();
  const std::size_t frames = pred.frames();
  const std::size_t blocks = p.size() / frames;
  double mse = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) mse += (p[i] - t[i]) * (p[i] - t[i]);
  mse /= static_cast<double>(p.size());
  double vel = 0.0;
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t f = 0; f + 1 < frames; ++f) {
      const std::size_t i = b * frames + f;
      const double dv = (p[i + 1] - p[i]) - (t[i + 1] - t[i]);
      vel += dv * dv;
    }
  }
  vel /= static_cast<double>(blocks * (frames - 1));
  return mse + vel;
}

ad::Var loss_task(ad::Var pred, ad::Var target, std::size_t frames) {
  auto mse = ad::mean(ad::square(ad::sub(pred, target)));
  auto vel = ad::mean(ad::square(ad::sub(ad::frame_diff(pred, frames), ad::frame_diff(target, frames))));
  return ad::add(mse, vel);
}

}  // namespace ducp::model
