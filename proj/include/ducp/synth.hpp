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
#include <string>
#include <vector>

#include "ducp/pose_shape.hpp"
#include "ducp/rng.hpp"
#include "ducp/tensor.hpp"

namespace ducp::synth {

/// Shape of one synthetic episode.
struct TrajectorySpec {
  std::size_t T = 16;
  std::size_t d_theta = 12;
  std::size_t d_beta = 4;
  std::size_t m = 24;
  double obs_noise_sigma = 0.1;
  /// Probability that a whole observation frame is zeroed.
  double occlusion_rate = 0.1;
  std::size_t num_harmonics = 3;

  std::size_t target_dim() const { return d_theta + d_beta; }
  /// Throws ParameterError on an invalid spec.
  void validate() const;
  friend bool operator==(const TrajectorySpec&, const TrajectorySpec&) = default;
};

/// One generating regime: observation row o_t = obs_map * y_t + N(0, noise_sigma^2).
struct Regime {
  Tensor obs_map;  // [m x (d_theta + d_beta)]
  double noise_sigma = 0.0;
};

struct Episode {
  std::size_t episode_id = 0;
  Tensor observations;  // [T x m]
  std::vector<bool> occluded;
  PoseShapeOutput target;
  std::size_t regime_id = 0;

  friend bool operator==(const Episode&, const Episode&) = default;
};

/// Identity observation map with no noise (requires m == d_theta + d_beta).
Regime identity_regime(const TrajectorySpec& spec);

/// Regime chain derived from a world seed. Regime 0 has a random map with
/// entries N(0, 1/D); regime r >= 1 redraws A_r = A_{r-1} + shift * G_r with
/// fresh G_r ~ N(0, 1/D) and noise sigma_r = sigma_0 * (1 + shift * r).
/// Regime r depends only on (spec, world_seed, shift, r).
class RegimeChain {
 public:
  RegimeChain(TrajectorySpec spec, std::uint64_t world_seed, double shift);

  const Regime& regime(std::size_t id);
  const TrajectorySpec& spec() const noexcept { return spec_; }
  std::uint64_t world_seed() const noexcept { return world_seed_; }
  double shift() const noexcept { return shift_; }

 private:
  TrajectorySpec spec_;
  std::uint64_t world_seed_;
  double shift_;
  std::vector<Regime> regimes_;
};

/// Latent target is a sum of random-phase sinusoids per dimension; the
/// observation is the regime's linear map plus Gaussian noise, with whole
/// frames zeroed at the occlusion rate.
Episode gen_episode(const TrajectorySpec& spec, const Regime& regime, std::size_t regime_id, RngStream& rng);

enum class StreamMode { iid, changepoint };

std::string to_string(StreamMode mode);
StreamMode stream_mode_from_string(const std::string& text);

struct StreamSpec {
  StreamMode mode = StreamMode::iid;
  /// Episodes per regime segment (changepoint mode).
  long long segment_length = 50;
  std::size_t n = 100;
  /// iid mode draws every episode from this regime; changepoint mode starts here.
  std::size_t base_regime = 0;
  std::size_t first_episode_id = 0;
};

/// Episode i uses rng.split(first_episode_id + i), so prefixes are stable in n.
std::vector<Episode> gen_stream(const StreamSpec& spec, RegimeChain& regimes, const RngStream& rng);

/// Adds iid N(0, sigma^2) noise to every entry.
PoseShapeOutput corrupt_output(const PoseShapeOutput& y, double sigma, RngStream& rng);

/// Episode CSV:
/// `episode_id,frame,regime_id,occluded,obs_0..obs_{m-1},theta_0..,beta_0..`,
/// one row per (episode, frame), floats with 17 significant digits, LF endings.
std::string episodes_to_csv(const std::vector<Episode>& episodes);
std::vector<Episode> episodes_from_csv(const std::string& text);

}  // namespace ducp::synth
