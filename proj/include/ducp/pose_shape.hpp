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

#include "ducp/tensor.hpp"

namespace ducp {

/// Prediction target: a per-frame pose block and a per-frame shape block.
/// theta is [d_theta x T], beta is [d_beta x T].
struct PoseShapeOutput {
  Tensor theta;
  Tensor beta;

  std::size_t frames() const { return theta.cols(); }
  std::size_t d_theta() const { return theta.rows(); }
  std::size_t d_beta() const { return beta.rows(); }

  /// theta rows followed by beta rows, each row spanning all frames.
  std::vector<double> flatten() const;
  static PoseShapeOutput from_flat(std::span<const double> flat, std::size_t d_theta, std::size_t d_beta,
                                   std::size_t frames);

  friend bool operator==(const PoseShapeOutput&, const PoseShapeOutput&) = default;
};

PoseShapeOutput operator+(const PoseShapeOutput& a, const PoseShapeOutput& b);
PoseShapeOutput operator-(const PoseShapeOutput& a, const PoseShapeOutput& b);

}  // namespace ducp
