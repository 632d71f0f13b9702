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

#include <cmath>
#include <set>

#include "ducp/error.hpp"
#include "ducp/synth.hpp"

using namespace ducp;
using namespace ducp::synth;

TEST_CASE("noiseless identity regime reconstructs targets") {
  TrajectorySpec spec;
  spec.m = spec.target_dim();
  spec.obs_noise_sigma = 0.0;
  spec.occlusion_rate = 0.0;
  RngStream rng(3);
  const Episode ep = gen_episode(spec, identity_regime(spec), 0, rng);
  for (std::size_t t = 0; t < spec.T; ++t) {
    for (std::size_t i = 0; i < spec.d_theta; ++i) CHECK(ep.observations.at(t, i) == ep.target.theta.at(i, t));
    for (std::size_t i = 0; i < spec.d_beta; ++i)
      CHECK(ep.observations.at(t, spec.d_theta + i) == ep.target.beta.at(i, t));
  }
  CHECK_THROWS_AS(identity_regime(TrajectorySpec{}), ParameterError);
}

TEST_CASE("heavy occlusion zeroes whole frames") {
  TrajectorySpec spec;
  spec.occlusion_rate = 0.99;
  RegimeChain chain(spec, 1, 0.0);
  RngStream rng(4);
  const Episode ep = gen_episode(spec, chain.regime(0), 0, rng);
  std::size_t occluded = 0;
  for (std::size_t t = 0; t < spec.T; ++t) {
    if (!ep.occluded[t]) continue;
    ++occluded;
    for (std::size_t i = 0; i < spec.m; ++i) CHECK(ep.observations.at(t, i) == 0.0);
  }
  CHECK(occluded >= 1);
}

TEST_CASE("episode generation is deterministic") {
  TrajectorySpec spec;
  RegimeChain chain(spec, 9, 0.3);
  RngStream a(5), b(5);
  CHECK(gen_episode(spec, chain.regime(2), 2, a) == gen_episode(spec, chain.regime(2), 2, b));
}

TEST_CASE("spec validation") {
  TrajectorySpec bad;
  bad.T = 1;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = {};
  bad.occlusion_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = {};
  bad.obs_noise_sigma = -1.0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("stream regimes") {
  TrajectorySpec spec;
  RegimeChain chain(spec, 1, 0.5);
  const RngStream rng(17);

  StreamSpec iid;
  iid.n = 100;
  for (const auto& ep : gen_stream(iid, chain, rng)) CHECK(ep.regime_id == 0);

  StreamSpec cp;
  cp.mode = StreamMode::changepoint;
  cp.segment_length = 10;
  cp.n = 25;
  const auto eps = gen_stream(cp, chain, rng);
  REQUIRE(eps.size() == 25);
  for (std::size_t i = 0; i < 25; ++i) CHECK(eps[i].regime_id == (i < 10 ? 0u : i < 20 ? 1u : 2u));

  cp.segment_length = 0;
  CHECK_THROWS_AS(gen_stream(cp, chain, rng), ParameterError);
  cp.segment_length = -3;
  CHECK_THROWS_AS(gen_stream(cp, chain, rng), ParameterError);

  RegimeChain chain2(spec, 1, 0.5);
  CHECK(gen_stream(iid, chain, rng) == gen_stream(iid, chain2, rng));
}

TEST_CASE("regime chain depends only on world seed and index") {
  TrajectorySpec spec;
  RegimeChain a(spec, 3, 0.4), b(spec, 3, 0.4);
  const Tensor late = a.regime(5).obs_map;
  b.regime(2);
  CHECK(b.regime(5).obs_map == late);
  CHECK(a.regime(0).obs_map != a.regime(1).obs_map);
  RegimeChain flat(spec, 3, 0.0);
  CHECK(flat.regime(0).obs_map == flat.regime(4).obs_map);
}

TEST_CASE("corrupt_output") {
  TrajectorySpec spec;
  RegimeChain chain(spec, 1, 0.0);
  RngStream rng(2);
  const Episode ep = gen_episode(spec, chain.regime(0), 0, rng);

  RngStream r0(1);
  CHECK(corrupt_output(ep.target, 0.0, r0) == ep.target);

  RngStream r1(8), r2(8);
  CHECK(corrupt_output(ep.target, 0.3, r1) == corrupt_output(ep.target, 0.3, r2));

  // 10^5 entries of unit-scale noise.
  PoseShapeOutput big{Tensor({100, 500}, 0.0), Tensor({100, 500}, 0.0)};
  RngStream r3(33);
  const auto noisy = corrupt_output(big, 1.0, r3);
  double s = 0.0, s2 = 0.0;
  const auto flat = noisy.flatten();
  for (double v : flat) {
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(flat.size());
  const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
  CHECK(std::abs(sd - 1.0) < 0.02);
  RngStream r4(1);
  CHECK_THROWS_AS(corrupt_output(ep.target, -0.1, r4), ParameterError);
}

TEST_CASE("episode CSV round trip") {
  TrajectorySpec spec;
  RegimeChain chain(spec, 1, 0.2);
  StreamSpec cp;
  cp.mode = StreamMode::changepoint;
  cp.segment_length = 3;
  cp.n = 7;
  const auto eps = gen_stream(cp, chain, RngStream(4));
  const std::string csv = episodes_to_csv(eps);
  CHECK(csv.rfind("episode_id,frame,regime_id,occluded,obs_0,", 0) == 0);
  CHECK(csv.find('\r') == std::string::npos);
  const auto back = episodes_from_csv(csv);
  CHECK(back == eps);
  CHECK(episodes_to_csv(back) == csv);
  CHECK_THROWS_AS(episodes_from_csv("a,b\n1,2\n"), UsageError);
}

TEST_CASE("iid halves agree in mean and variance") {
  // Exchangeability proxy: first-half minus second-half statistics, 20 seeds.
  TrajectorySpec spec;
  RegimeChain chain(spec, 1, 0.0);
  std::vector<double> mean_diffs, var_diffs;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    StreamSpec s;
    s.n = 200;
    const auto eps = gen_stream(s, chain, RngStream(seed));
    double stats[2][2] = {{0, 0}, {0, 0}};
    double counts[2] = {0, 0};
    for (std::size_t i = 0; i < eps.size(); ++i) {
      const int half = i < eps.size() / 2 ? 0 : 1;
      for (double v : eps[i].observations.data()) {
        stats[half][0] += v;
        stats[half][1] += v * v;
        counts[half] += 1;
      }
    }
    double mean[2], var[2];
    for (int h = 0; h < 2; ++h) {
      mean[h] = stats[h][0] / counts[h];
      var[h] = stats[h][1] / counts[h] - mean[h] * mean[h];
    }
    mean_diffs.push_back(mean[0] - mean[1]);
    var_diffs.push_back(var[0] - var[1]);
  }
  auto z = [](const std::vector<double>& d) {
    double m = 0, s2 = 0;
    for (double v : d) m += v;
    m /= static_cast<double>(d.size());
    for (double v : d) s2 += (v - m) * (v - m);
    const double se = std::sqrt(s2 / static_cast<double>(d.size() - 1) / static_cast<double>(d.size()));
    return std::abs(m) / se;
  };
  CHECK(z(mean_diffs) < 4.0);
  CHECK(z(var_diffs) < 4.0);
}

TEST_CASE("mode parsing") {
  CHECK(stream_mode_from_string("iid") == StreamMode::iid);
  CHECK(stream_mode_from_string("changepoint") == StreamMode::changepoint);
  CHECK_THROWS_AS(stream_mode_from_string("drift"), ParameterError);
}
