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
#include <map>
#include <string>

#include "ducp/params.hpp"

namespace ducp {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled (AdamW-style) decay, applied as p -= lr * weight_decay * p.
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay. First and second moments persist
/// across calls to step(); one optimizer instance per parameter set.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Uses config().lr.
  void step(ParamStore& params, const Gradients& grads) { step(params, grads, config_.lr); }
  void step(ParamStore& params, const Gradients& grads, double lr);

  const AdamConfig& config() const noexcept { return config_; }
  std::size_t steps() const noexcept { return steps_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  AdamConfig config_;
  std::size_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace ducp
