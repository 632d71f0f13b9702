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

#include <map>
#include <string>
#include <vector>

#include "ducp/tensor.hpp"

namespace ducp {

/// Named trainable tensors. Iteration is lexicographic by name; a
/// parameter's shape is fixed once it has been added.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor>;

  void add(const std::string& name, Tensor value);
  /// Replaces the value of an existing parameter. Shapes must match.
  void set(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  Tensor& mutable_get(const std::string& name);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t total_elements() const;
  std::vector<std::string> names() const;

  /// Copies every entry of `other` into this store under `prefix + name`.
  void merge(const ParamStore& other, const std::string& prefix = "");
  /// Entries whose name starts with `prefix`, with the prefix removed.
  ParamStore with_prefix_stripped(const std::string& prefix) const;

  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  Map params_;
};

using Gradients = std::map<std::string, Tensor>;

/// Checkpoint document `{name: {"shape": [...], "data": [...]}}` with every
/// float written using 17 significant digits.
std::string params_to_json(const ParamStore& params);
ParamStore params_from_json(const std::string& text);
void save_params(const ParamStore& params, const std::string& path);
ParamStore load_params(const std::string& path);

}  // namespace ducp
