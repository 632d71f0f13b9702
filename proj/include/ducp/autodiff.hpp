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
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ducp/params.hpp"
#include "ducp/rng.hpp"
#include "ducp/tensor.hpp"

namespace ducp::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only record of primitive operations. Nodes are stored in creation
/// order, which is already a topological order, so backward is one reverse
/// sweep. A tape is owned by a single training step.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to `store[name]`. Repeated calls with the same name return the same node.
  Var param(const ParamStore& store, const std::string& name);

  /// Reverse sweep from a scalar loss. Returns a gradient for every entry of
  /// `params`; parameters the loss does not reach get zeros.
  Gradients backward(Var loss, const ParamStore& params);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Used by operation implementations.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient accumulator of node `id`, or nullptr when it needs none.
  Tensor* grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> param_ids_;
};

// Primitive operations. Shapes are rank 2 ([rows x cols]) unless noted;
// biases and placeholders are rank 1.

/// x[N x K] * w[K x M] + b[M].
Var affine(Var x, Var w, Var b);
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var square(Var x);
/// Sum of all entries, as a [1] tensor.
Var sum(Var x);
Var mean(Var x);
/// Elementwise product with a constant mask (inverted dropout).
Var apply_mask(Var x, const Tensor& mask);
/// Rows with `replace[r]` set take the placeholder vector instead.
Var replace_rows(Var x, const std::vector<bool>& replace, Var placeholder);
Var reshape(Var x, Shape shape);
Var concat_cols(Var a, Var b);
Var slice_cols(Var x, std::size_t start, std::size_t count);
/// out[:, c] = x[:, source[c]].
Var permute_cols(Var x, const std::vector<std::size_t>& source);
/// Each row repeated `times` times consecutively: out row r*times+h = x row r.
Var repeat_rows(Var x, std::size_t times);
/// Differences along the frame axis. Each row holds `blocks` runs of
/// `frames` consecutive entries; the result holds blocks*(frames-1) entries per row.
Var frame_diff(Var y, std::size_t frames);
/// Same value, no gradient flow.
Var detach(Var x);

}  // namespace ducp::ad

namespace ducp {

/// Numerically stable logistic function.
double sigmoid(double x) noexcept;
Tensor sigmoid(const Tensor& x);

/// Inverted-dropout mask: entries are 0 with probability `rate`, else 1/(1-rate).
Tensor dropout_mask(const Shape& shape, double rate, RngStream& rng);

}  // namespace ducp
