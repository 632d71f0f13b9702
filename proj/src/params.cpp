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
#include "ducp/params.hpp"

#include <json.hpp>

#include "ducp/error.hpp"
#include "ducp/text.hpp"

namespace ducp {

void ParamStore::add(const std::string& name, Tensor value) {
  if (params_.count(name)) throw UsageError("duplicate parameter '" + name + "'");
  params_.emplace(name, std::move(value));
}

void ParamStore::set(const std::string& name, Tensor value) {
  Tensor& slot = mutable_get(name);
  if (slot.shape() != value.shape()) {
    throw DimensionError("parameter '" + name + "' has shape " + shape_to_string(slot.shape()) + ", got " +
                         shape_to_string(value.shape()));
  }
  slot = std::move(value);
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::mutable_get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

void ParamStore::merge(const ParamStore& other, const std::string& prefix) {
  for (const auto& [name, t] : other) add(prefix + name, t);
}

ParamStore ParamStore::with_prefix_stripped(const std::string& prefix) const {
  ParamStore out;
  for (const auto& [name, t] : params_) {
    if (name.rfind(prefix, 0) == 0) out.add(name.substr(prefix.size()), t);
  }
  return out;
}

std::string params_to_json(const ParamStore& params) {
  // Written by hand so every float carries exactly 17 significant digits.
  std::string out = "{";
  bool first = true;
  for (const auto& [name, t] : params) {
    out += first ? "\n  " : ",\n  ";
    first = false;
    out += nlohmann::json(name).dump();
    out += ": {\"shape\": [";
    for (std::size_t i = 0; i < t.shape().size(); ++i) {
      if (i) out += ", ";
      out += std::to_string(t.shape()[i]);
    }
    out += "], \"data\": [";
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (i) out += ", ";
      out += format_double(t[i]);
    }
    out += "]}";
  }
  out += "\n}\n";
  return out;
}

ParamStore params_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed checkpoint: ") + e.what());
  }
  if (!doc.is_object()) throw UsageError("checkpoint must be a JSON object");
  ParamStore out;
  for (const auto& [name, entry] : doc.items()) {
    if (!entry.contains("shape") || !entry.contains("data")) {
      throw UsageError("checkpoint entry '" + name + "' needs shape and data");
    }
    Shape shape = entry.at("shape").get<Shape>();
    std::vector<double> data = entry.at("data").get<std::vector<double>>();
    out.add(name, Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void save_params(const ParamStore& params, const std::string& path) { write_file(path, params_to_json(params)); }

ParamStore load_params(const std::string& path) { return params_from_json(read_file(path)); }

}  // namespace ducp
