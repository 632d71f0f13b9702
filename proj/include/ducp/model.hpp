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
#include <string>
#include <vector>

#include "ducp/autodiff.hpp"
#include "ducp/pose_shape.hpp"
#include "ducp/synth.hpp"

namespace ducp::model {

struct ModelConfig {
  std::size_t T = 16;
  std::size_t m = 24;
  std::size_t d_theta = 12;
  std::size_t d_beta = 4;
  /// Fraction of frames hidden from the global branch in train / mc_dropout mode.
  double mask_ratio = 0.25;
  /// Half-width of the local window around the centre frame.
  std::size_t local_window = 4;
  /// Embedding width: mean-pooled window features followed by the global embedding.
  std::size_t d_embed = 64;
  std::size_t frame_hidden = 32;
  std::size_t global_hidden = 256;
  /// Hidden width of the per-dimension temporal refinement MLP.
  std::size_t temporal_hidden = 64;
  std::size_t local_hidden = 128;
  double dropout_rate = 0.1;

  static ModelConfig for_trajectory(const synth::TrajectorySpec& spec);

  std::size_t output_dim() const { return (d_theta + d_beta) * T; }
  std::size_t masked_frames() const;
  /// First frame of the local window: T/2 - w, shifted left if the window would overrun.
  std::size_t window_start() const;
  std::size_t window_frames() const { return 2 * local_window + 1; }
  std::size_t global_embed() const { return d_embed - frame_hidden; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);

enum class Mode { train, eval, mc_dropout };

struct ForwardResult {
  PoseShapeOutput y_global;
  PoseShapeOutput y_local_correction;
  PoseShapeOutput y_final;
  Tensor phi_gl;  // [d_embed]
  std::vector<bool> mask_used;
};

/// Recorded outputs of a batched forward pass. Rows follow the input rows.
struct ForwardGraph {
  ad::Var y_global;  // [B x output_dim]
  ad::Var y_local;   // [B x output_dim]
  ad::Var y_final;   // [B x output_dim]
  ad::Var phi_gl;    // [B x d_embed]
  std::vector<std::vector<bool>> masks;
};

ParamStore init_params(const ModelConfig& cfg, RngStream& rng);

/// Stacks episode observations into [B x T*m] rows.
Tensor stack_observations(const std::vector<const synth::Episode*>& episodes);
/// Stacks flattened targets into [B x output_dim] rows.
Tensor stack_targets(const std::vector<const synth::Episode*>& episodes);

/// Records the estimator on `tape`. `observations` is [B x T*m].
/// Masking and dropout draw from `rng` in train and mc_dropout modes only.
ForwardGraph forward_graph(ad::Tape& tape, const ParamStore& params, const ModelConfig& cfg,
                           const Tensor& observations, Mode mode, RngStream& rng);

ForwardResult forward(const Tensor& observations, const ModelConfig& cfg, const ParamStore& params, RngStream& rng,
                      Mode mode);

/// Batched forward over many episodes. In eval mode each row equals forward() on that episode.
std::vector<ForwardResult> forward_batch(const std::vector<const synth::Episode*>& episodes, const ModelConfig& cfg,
                                         const ParamStore& params, RngStream& rng, Mode mode);

/// H independent train-mode passes with fresh masks.
std::vector<ForwardResult> sample_hypotheses(const Tensor& observations, const ModelConfig& cfg,
                                             const ParamStore& params, std::size_t H, RngStream& rng);

/// Mean squared error over all entries plus mean squared error of frame-to-frame differences.
double loss_task(const PoseShapeOutput& pred, const PoseShapeOutput& target);
/// Same quantity on the tape; rows of `pred`/`target` are flattened outputs.
ad::Var loss_task(ad::Var pred, ad::Var target, std::size_t frames);

}  // namespace ducp::model
