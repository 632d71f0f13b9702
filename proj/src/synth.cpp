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
#include "ducp/synth.hpp"

#include <cmath>
#include <map>
#include <numbers>

#include "ducp/error.hpp"
#include "ducp/text.hpp"

namespace ducp::synth {

void TrajectorySpec::validate() const {
  if (T < 2) throw ParameterError("T must be at least 2");
  if (d_theta < 1 || d_beta < 1 || m < 1) throw ParameterError("all dimensions must be at least 1");
  if (!(obs_noise_sigma >= 0.0)) throw ParameterError("obs_noise_sigma must be non-negative");
  if (!(occlusion_rate >= 0.0 && occlusion_rate < 1.0)) throw ParameterError("occlusion_rate must lie in [0, 1)");
  if (num_harmonics < 1) throw ParameterError("num_harmonics must be at least 1");
}

Regime identity_regime(const TrajectorySpec& spec) {
  if (spec.m != spec.target_dim()) {
    throw ParameterError("identity regime needs m == d_theta + d_beta");
  }
  Tensor a({spec.m, spec.m}, 0.0);
  for (std::size_t i = 0; i < spec.m; ++i) a.at(i, i) = 1.0;
  return {std::move(a), 0.0};
}

RegimeChain::RegimeChain(TrajectorySpec spec, std::uint64_t world_seed, double shift)
    : spec_(spec), world_seed_(world_seed), shift_(shift) {
  spec_.validate();
  if (!(shift >= 0.0)) throw ParameterError("shift must be non-negative");
}

const Regime& RegimeChain::regime(std::size_t id) {
  const RngStream world(world_seed_);
  const std::size_t d = spec_.target_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  while (regimes_.size() <= id) {
    const std::size_t r = regimes_.size();
    RngStream rng = world.split(r);
    Regime next;
    if (r == 0) {
      next.obs_map = Tensor({spec_.m, d});
      for (auto& v : next.obs_map.data()) v = scale * rng.normal();
    } else {
      next.obs_map = regimes_.back().obs_map;
      for (auto& v : next.obs_map.data()) v += shift_ * scale * rng.normal();
    }
    next.noise_sigma = spec_.obs_noise_sigma * (1.0 + shift_ * static_cast<double>(r));
    regimes_.push_back(std::move(next));
  }
  return regimes_[id];
}

Episode gen_episode(const TrajectorySpec& spec, const Regime& regime, std::size_t regime_id, RngStream& rng) {
  spec.validate();
  const std::size_t d = spec.target_dim();
  if (regime.obs_map.shape() != Shape{spec.m, d}) {
    throw DimensionError("regime map " + shape_to_string(regime.obs_map.shape()) + " does not fit spec [" +
                         std::to_string(spec.m) + "x" + std::to_string(d) + "]");
  }
  // y[dim][t] = sum_h a_h / sqrt(H) * sin(pi * h * t / T + phase_h)
  const double amp_scale = 1.0 / std::sqrt(static_cast<double>(spec.num_harmonics));
  Tensor y({d, spec.T}, 0.0);
  for (std::size_t dim = 0; dim < d; ++dim) {
    for (std::size_t h = 1; h <= spec.num_harmonics; ++h) {
      const double amp = amp_scale * rng.normal();
      const double phase = 2.0 * std::numbers::pi * rng.uniform();
      const double omega = std::numbers::pi * static_cast<double>(h) / static_cast<double>(spec.T);
      for (std::size_t t = 0; t < spec.T; ++t) {
        y.at(dim, t) += amp * std::sin(omega * static_cast<double>(t) + phase);
      }
    }
  }

  Episode ep;
  ep.regime_id = regime_id;
  ep.observations = Tensor({spec.T, spec.m}, 0.0);
  ep.occluded.assign(spec.T, false);
  for (std::size_t t = 0; t < spec.T; ++t) {
    ep.occluded[t] = spec.occlusion_rate > 0.0 && rng.uniform() < spec.occlusion_rate;
    for (std::size_t i = 0; i < spec.m; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += regime.obs_map.at(i, k) * y.at(k, t);
      const double noise = regime.noise_sigma > 0.0 ? regime.noise_sigma * rng.normal() : 0.0;
      ep.observations.at(t, i) = ep.occluded[t] ? 0.0 : acc + noise;
    }
  }
  ep.target = PoseShapeOutput::from_flat(y.data(), spec.d_theta, spec.d_beta, spec.T);
  return ep;
}

std::string to_string(StreamMode mode) { return mode == StreamMode::iid ? "iid" : "changepoint"; }

StreamMode stream_mode_from_string(const std::string& text) {
  if (text == "iid") return StreamMode::iid;
  if (text == "changepoint") return StreamMode::changepoint;
  throw ParameterError("unknown stream mode '" + text + "'");
}

std::vector<Episode> gen_stream(const StreamSpec& spec, RegimeChain& regimes, const RngStream& rng) {
  if (spec.n < 1) throw ParameterError("stream needs n >= 1");
  if (spec.mode == StreamMode::changepoint && spec.segment_length <= 0) {
    throw ParameterError("changepoint mode needs segment length k > 0");
  }
  std::vector<Episode> out;
  out.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t regime_id =
        spec.base_regime +
        (spec.mode == StreamMode::iid ? 0 : i / static_cast<std::size_t>(spec.segment_length));
    RngStream ep_rng = rng.split(spec.first_episode_id + i);
    Episode ep = gen_episode(regimes.spec(), regimes.regime(regime_id), regime_id, ep_rng);
    ep.episode_id = spec.first_episode_id + i;
    out.push_back(std::move(ep));
  }
  return out;
}

PoseShapeOutput corrupt_output(const PoseShapeOutput& y, double sigma, RngStream& rng) {
  if (!(sigma >= 0.0)) throw ParameterError("corruption sigma must be non-negative");
  PoseShapeOutput out = y;
  if (sigma == 0.0) return out;
  for (auto& v : out.theta.data()) v += sigma * rng.normal();
  for (auto& v : out.beta.data()) v += sigma * rng.normal();
  return out;
}

std::string episodes_to_csv(const std::vector<Episode>& episodes) {
  if (episodes.empty()) throw UsageError("no episodes to export");
  const auto& first = episodes.front();
  const std::size_t m = first.observations.cols();
  const std::size_t dt = first.target.d_theta(), db = first.target.d_beta();
  std::string out = "episode_id,frame,regime_id,occluded";
  for (std::size_t i = 0; i < m; ++i) out += ",obs_" + std::to_string(i);
  for (std::size_t i = 0; i < dt; ++i) out += ",theta_" + std::to_string(i);
  for (std::size_t i = 0; i < db; ++i) out += ",beta_" + std::to_string(i);
  out += '\n';
  for (const auto& ep : episodes) {
    if (ep.observations.cols() != m || ep.target.d_theta() != dt || ep.target.d_beta() != db) {
      throw DimensionError("episodes in one CSV must share dimensions");
    }
    for (std::size_t t = 0; t < ep.observations.rows(); ++t) {
      out += std::to_string(ep.episode_id) + ',' + std::to_string(t) + ',' + std::to_string(ep.regime_id) + ',' +
             (ep.occluded[t] ? '1' : '0');
      for (std::size_t i = 0; i < m; ++i) out += ',' + format_double(ep.observations.at(t, i));
      for (std::size_t i = 0; i < dt; ++i) out += ',' + format_double(ep.target.theta.at(i, t));
      for (std::size_t i = 0; i < db; ++i) out += ',' + format_double(ep.target.beta.at(i, t));
      out += '\n';
    }
  }
  return out;
}

namespace {

std::size_t count_prefix(const std::vector<std::string>& header, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& h : header) {
    if (h.rfind(prefix, 0) == 0) {
      if (h != prefix + std::to_string(n)) throw UsageError("unexpected column '" + h + "'");
      ++n;
    }
  }
  return n;
}

}  // namespace

std::vector<Episode> episodes_from_csv(const std::string& text) {
  auto lines = split(text, '\n');
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.size() < 2) throw UsageError("episode CSV has no data rows");
  const auto header = split(lines[0], ',');
  if (header.size() < 4 || header[0] != "episode_id" || header[1] != "frame" || header[2] != "regime_id" ||
      header[3] != "occluded") {
    throw UsageError("episode CSV header must start with episode_id,frame,regime_id,occluded");
  }
  const std::size_t m = count_prefix(header, "obs_");
  const std::size_t dt = count_prefix(header, "theta_");
  const std::size_t db = count_prefix(header, "beta_");
  if (m == 0 || dt == 0 || db == 0 || header.size() != 4 + m + dt + db) {
    throw UsageError("episode CSV header has an unexpected column layout");
  }

  struct Rows {
    std::size_t regime_id = 0;
    std::vector<std::vector<std::string>> frames;
  };
  std::vector<std::size_t> order;
  std::map<std::size_t, Rows> by_episode;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    auto cells = split(lines[li], ',');
    if (cells.size() != header.size()) {
      throw UsageError("episode CSV line " + std::to_string(li + 1) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(header.size()));
    }
    const auto id = static_cast<std::size_t>(parse_int(cells[0]));
    const auto frame = static_cast<std::size_t>(parse_int(cells[1]));
    auto [it, inserted] = by_episode.try_emplace(id);
    if (inserted) {
      order.push_back(id);
      it->second.regime_id = static_cast<std::size_t>(parse_int(cells[2]));
    }
    if (frame != it->second.frames.size()) {
      throw UsageError("episode " + std::to_string(id) + ": frames out of order at line " + std::to_string(li + 1));
    }
    it->second.frames.push_back(std::move(cells));
  }

  std::vector<Episode> out;
  out.reserve(order.size());
  const std::size_t T = by_episode.at(order.front()).frames.size();
  for (auto id : order) {
    const Rows& rows = by_episode.at(id);
    if (rows.frames.size() != T) throw UsageError("episode " + std::to_string(id) + " has a different frame count");
    Episode ep;
    ep.episode_id = id;
    ep.regime_id = rows.regime_id;
    ep.observations = Tensor({T, m});
    ep.occluded.assign(T, false);
    Tensor theta({dt, T}), beta({db, T});
    for (std::size_t t = 0; t < T; ++t) {
      const auto& c = rows.frames[t];
      ep.occluded[t] = c[3] == "1";
      for (std::size_t i = 0; i < m; ++i) ep.observations.at(t, i) = parse_double(c[4 + i]);
      for (std::size_t i = 0; i < dt; ++i) theta.at(i, t) = parse_double(c[4 + m + i]);
      for (std::size_t i = 0; i < db; ++i) beta.at(i, t) = parse_double(c[4 + m + dt + i]);
    }
    ep.target = {std::move(theta), std::move(beta)};
    out.push_back(std::move(ep));
  }
  return out;
}

}  // namespace ducp::synth
