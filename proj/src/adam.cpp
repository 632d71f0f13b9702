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
#include "ducp/adam.hpp"

#include <cmath>

#include "ducp/error.hpp"

namespace ducp {

void Adam::step(ParamStore& params, const Gradients& grads, double lr) {
  for (const auto& name : params.names()) {
    if (!grads.count(name)) throw UsageError("adam: no gradient for parameter '" + name + "'");
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bias1 = 1.0 - std::pow(config_.beta1, t);
  const double bias2 = 1.0 - std::pow(config_.beta2, t);
  for (const auto& name : params.names()) {
    Tensor& p = params.mutable_get(name);
    const Tensor& g = grads.at(name);
    if (g.shape() != p.shape()) {
      throw DimensionError("adam: gradient for '" + name + "' has shape " + shape_to_string(g.shape()) +
                           ", parameter has " + shape_to_string(p.shape()));
    }
    auto [it, inserted] = moments_.try_emplace(name);
    if (inserted) {
      it->second.m = Tensor(p.shape(), 0.0);
      it->second.v = Tensor(p.shape(), 0.0);
    }
    Tensor& m = it->second.m;
    Tensor& v = it->second.v;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bias1;
      const double vhat = v[i] / bias2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * p[i]);
    }
    if (!p.all_finite()) throw NumericError("adam: parameter '" + name + "' became non-finite");
  }
}

}  // namespace ducp
