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
#include "ducp/pose_shape.hpp"

#include "ducp/error.hpp"

namespace ducp {

std::vector<double> PoseShapeOutput::flatten() const {
  std::vector<double> out(theta.data().begin(), theta.data().end());
  out.insert(out.end(), beta.data().begin(), beta.data().end());
  return out;
}

PoseShapeOutput PoseShapeOutput::from_flat(std::span<const double> flat, std::size_t d_theta, std::size_t d_beta,
                                           std::size_t frames) {
  if (flat.size() != (d_theta + d_beta) * frames) {
    throw DimensionError("flat output of length " + std::to_string(flat.size()) + " does not match [" +
                         std::to_string(d_theta + d_beta) + "x" + std::to_string(frames) + "]");
  }
  const auto split_at = flat.begin() + static_cast<std::ptrdiff_t>(d_theta * frames);
  return {Tensor({d_theta, frames}, std::vector<double>(flat.begin(), split_at)),
          Tensor({d_beta, frames}, std::vector<double>(split_at, flat.end()))};
}

namespace {
Tensor combine(const Tensor& a, const Tensor& b, double sign) {
  if (a.shape() != b.shape()) {
    throw DimensionError("output blocks differ: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * b[i];
  return out;
}
}  // namespace

PoseShapeOutput operator+(const PoseShapeOutput& a, const PoseShapeOutput& b) {
  return {combine(a.theta, b.theta, 1.0), combine(a.beta, b.beta, 1.0)};
}

PoseShapeOutput operator-(const PoseShapeOutput& a, const PoseShapeOutput& b) {
  return {combine(a.theta, b.theta, -1.0), combine(a.beta, b.beta, -1.0)};
}

}  // namespace ducp
