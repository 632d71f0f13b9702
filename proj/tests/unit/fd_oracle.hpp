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

// Central finite differences over a ParamStore. Test-only; independent of the tape.

#include <algorithm>
#include <cmath>
#include <functional>

#include "ducp/autodiff.hpp"

namespace ducp::testing {

inline Gradients finite_difference(const ParamStore& params, const std::function<double(const ParamStore&)>& f,
                                   double h = 1e-5) {
  Gradients out;
  ParamStore probe = params;
  for (const auto& name : params.names()) {
    Tensor g(params.get(name).shape(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double orig = params.get(name)[i];
      probe.mutable_get(name)[i] = orig + h;
      const double up = f(probe);
      probe.mutable_get(name)[i] = orig - h;
      const double down = f(probe);
      probe.mutable_get(name)[i] = orig;
      g[i] = (up - down) / (2.0 * h);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

/// max |a-b| / max(1e-6 floor, |a|+|b|) scaled per tensor norm, the usual
/// relative error for gradient checks: ||a-b|| / max(||a||, ||b||, floor).
inline double max_relative_error(const Gradients& analytic, const Gradients& numeric, double floor = 1e-8) {
  double worst = 0.0;
  for (const auto& [name, a] : analytic) {
    const Tensor& b = numeric.at(name);
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      diff += (a[i] - b[i]) * (a[i] - b[i]);
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nb), floor});
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

}  // namespace ducp::testing
