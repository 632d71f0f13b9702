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
#include "ducp/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "ducp/error.hpp"

namespace ducp {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

MatMap as_matrix(Tensor& t) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

ad::Tape& same_tape(const ad::Var& a, const ad::Var& b) {
  if (!a.valid() || a.tape() != b.tape()) throw UsageError("operands are recorded on different tapes");
  return *a.tape();
}

template <typename F>
Tensor map_values(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

double sigmoid(double x) noexcept {
  // Clamped so the output stays strictly inside (0, 1) even when saturated.
  constexpr double kHi = 1.0 - 0x1.0p-53;
  constexpr double kLo = std::numeric_limits<double>::min();
  double y;
  if (x >= 0.0) {
    y = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    y = e / (1.0 + e);
  }
  return std::clamp(y, kLo, kHi);
}

Tensor sigmoid(const Tensor& x) {
  return map_values(x, [](double v) { return sigmoid(v); });
}

Tensor dropout_mask(const Shape& shape, double rate, RngStream& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  Tensor mask(shape, 1.0);
  if (rate == 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& v : mask.data()) v = rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

}  // namespace ducp

namespace ducp::ad {

const Tensor& Var::value() const {
  if (!tape_) throw UsageError("use of an empty Var");
  return tape_->value(id_);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by operation on node " + std::to_string(nodes_.size()));
  }
  bool needs = false;
  for (auto p : parents) needs = needs || nodes_[p].needs_grad;
  Node node;
  node.value = std::move(value);
  node.parents = std::move(parents);
  node.needs_grad = needs;
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return record(std::move(value), {}, nullptr); }

Var Tape::param(const ParamStore& store, const std::string& name) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var(this, it->second);
  Var v = record(store.get(name), {}, nullptr);
  nodes_[v.id()].needs_grad = true;
  param_ids_.emplace(name, v.id());
  return v;
}

Tensor* Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return &n.grad;
}

Gradients Tape::backward(Var loss, const ParamStore& params) {
  if (loss.tape() != this) throw UsageError("loss was not recorded on this tape");
  if (loss.value().size() != 1) {
    throw UsageError("backward needs a scalar loss, got shape " + shape_to_string(loss.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  if (Tensor* g = grad_buffer(loss.id())) (*g)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
  Gradients grads;
  for (const auto& [name, value] : params) {
    auto it = param_ids_.find(name);
    if (it != param_ids_.end() && !nodes_[it->second].grad.empty()) {
      grads.emplace(name, nodes_[it->second].grad);
    } else {
      grads.emplace(name, Tensor(value.shape(), 0.0));
    }
  }
  return grads;
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_to_string(av.shape()) + " and " +
                         shape_to_string(bv.shape()));
  }
  Tensor out({av.rows(), bv.cols()});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const auto g = as_matrix(tp.grad(self));
    if (Tensor* ga = tp.grad_buffer(ia)) as_matrix(*ga).noalias() += g * as_matrix(tp.value(ib)).transpose();
    if (Tensor* gb = tp.grad_buffer(ib)) as_matrix(*gb).noalias() += as_matrix(tp.value(ia)).transpose() * g;
  });
}

Var affine(Var x, Var w, Var b) {
  Tape& t = same_tape(x, w);
  same_tape(x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  require_rank2(xv, "affine");
  require_rank2(wv, "affine");
  if (xv.cols() != wv.rows() || bv.rank() != 1 || bv.size() != wv.cols()) {
    throw DimensionError("affine: incompatible shapes x" + shape_to_string(xv.shape()) + " w" +
                         shape_to_string(wv.shape()) + " b" + shape_to_string(bv.shape()));
  }
  Tensor out({xv.rows(), wv.cols()});
  auto om = as_matrix(out);
  om.noalias() = as_matrix(xv) * as_matrix(wv);
  const Eigen::Map<const Eigen::RowVectorXd> bias(bv.data().data(), static_cast<Eigen::Index>(bv.size()));
  om.rowwise() += bias;
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return t.record(std::move(out), {ix, iw, ib}, [ix, iw, ib](Tape& tp, std::size_t self) {
    const auto g = as_matrix(tp.grad(self));
    if (Tensor* gx = tp.grad_buffer(ix)) as_matrix(*gx).noalias() += g * as_matrix(tp.value(iw)).transpose();
    if (Tensor* gw = tp.grad_buffer(iw)) as_matrix(*gw).noalias() += as_matrix(tp.value(ix)).transpose() * g;
    if (Tensor* gb = tp.grad_buffer(ib)) {
      Eigen::Map<Eigen::RowVectorXd> gbm(gb->data().data(), static_cast<Eigen::Index>(gb->size()));
      gbm += g.colwise().sum();
    }
  });
}

namespace {

template <typename Fwd, typename Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
  Tape& t = *x.tape();
  Tensor out = map_values(x.value(), fwd);
  const std::size_t ix = x.id();
  return t.record(std::move(out), {ix}, [ix, deriv](Tape& tp, std::size_t self) {
    Tensor* gx = tp.grad_buffer(ix);
    if (!gx) return;
    const Tensor& g = tp.grad(self);
    const Tensor& xin = tp.value(ix);
    const Tensor& y = tp.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * deriv(xin[i], y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    for (auto id : {ia, ib}) {
      if (Tensor* gp = tp.grad_buffer(id)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
      }
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (Tensor* ga = tp.grad_buffer(ia)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = tp.grad_buffer(ib)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (Tensor* ga = tp.grad_buffer(ia)) {
      const Tensor& bv = tp.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = tp.grad_buffer(ib)) {
      const Tensor& av = tp.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  return unary(
      a, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(
      a, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(
      x, [](double v) { return ducp::sigmoid(v); }, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var square(Var x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sum(Var x) {
  Tape& t = *x.tape();
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t ix = x.id();
  return t.record(Tensor::scalar(s), {ix}, [ix](Tape& tp, std::size_t self) {
    Tensor* gx = tp.grad_buffer(ix);
    if (!gx) return;
    const double g = tp.grad(self)[0];
    for (auto& v : gx->data()) v += g;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var apply_mask(Var x, const Tensor& mask) {
  require_same_shape(x.value(), mask, "apply_mask");
  Tape& t = *x.tape();
  return mul(x, t.constant(mask));
}

Var replace_rows(Var x, const std::vector<bool>& replace, Var placeholder) {
  Tape& t = same_tape(x, placeholder);
  const Tensor& xv = x.value();
  const Tensor& pv = placeholder.value();
  require_rank2(xv, "replace_rows");
  const std::size_t cols = xv.cols();
  if (replace.size() != xv.rows() || pv.size() != cols) {
    throw DimensionError("replace_rows: x" + shape_to_string(xv.shape()) + " with placeholder" +
                         shape_to_string(pv.shape()) + " and " + std::to_string(replace.size()) + " flags");
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < replace.size(); ++r) {
    if (!replace[r]) continue;
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = pv[c];
  }
  const std::size_t ix = x.id(), ip = placeholder.id();
  return t.record(std::move(out), {ix, ip}, [ix, ip, replace, cols](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor* gx = tp.grad_buffer(ix);
    Tensor* gp = tp.grad_buffer(ip);
    for (std::size_t r = 0; r < replace.size(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double gv = g[r * cols + c];
        if (replace[r]) {
          if (gp) (*gp)[c] += gv;
        } else if (gx) {
          (*gx)[r * cols + c] += gv;
        }
      }
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tape& t = *x.tape();
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return t.record(std::move(out), {ix}, [ix](Tape& tp, std::size_t self) {
    Tensor* gx = tp.grad_buffer(ix);
    if (!gx) return;
    const Tensor& g = tp.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

Var concat_cols(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "concat_cols");
  require_rank2(bv, "concat_cols");
  if (av.rows() != bv.rows()) {
    throw DimensionError("concat_cols: row counts differ for " + shape_to_string(av.shape()) + " and " +
                         shape_to_string(bv.shape()));
  }
  const std::size_t rows = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor out({rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < ca; ++c) out.at(r, c) = av.at(r, c);
    for (std::size_t c = 0; c < cb; ++c) out.at(r, ca + c) = bv.at(r, c);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, rows, ca, cb](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const std::size_t w = ca + cb;
    if (Tensor* ga = tp.grad_buffer(ia)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < ca; ++c) (*ga)[r * ca + c] += g[r * w + c];
    }
    if (Tensor* gb = tp.grad_buffer(ib)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cb; ++c) (*gb)[r * cb + c] += g[r * w + ca + c];
    }
  });
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  require_rank2(xv, "slice_cols");
  if (count == 0 || start + count > xv.cols()) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_to_string(xv.shape()));
  }
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out({rows, count});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < count; ++c) out.at(r, c) = xv.at(r, start + c);
  const std::size_t ix = x.id();
  return t.record(std::move(out), {ix}, [ix, rows, cols, start, count](Tape& tp, std::size_t self) {
    Tensor* gx = tp.grad_buffer(ix);
    if (!gx) return;
    const Tensor& g = tp.grad(self);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < count; ++c) (*gx)[r * cols + start + c] += g[r * count + c];
  });
}

Var permute_cols(Var x, const std::vector<std::size_t>& source) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  require_rank2(xv, "permute_cols");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (source.size() != cols) {
    throw DimensionError("permute_cols: " + std::to_string(source.size()) + " indices for " + std::to_string(cols) +
                         " columns");
  }
  std::vector<bool> hit(cols, false);
  for (auto s : source) {
    if (s >= cols || hit[s]) throw ParameterError("permute_cols: indices are not a permutation");
    hit[s] = true;
  }
  Tensor out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = xv.at(r, source[c]);
  const std::size_t ix = x.id();
  return t.record(std::move(out), {ix}, [ix, rows, cols, source](Tape& tp, std::size_t self) {
    Tensor* gx = tp.grad_buffer(ix);
    if (!gx) return;
    const Tensor& g = tp.grad(self);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) (*gx)[r * cols + source[c]] += g[r * cols + c];
  });
}

Var repeat_rows(Var x, std::size_t times) {
  Tape& t = *x.tape();
  const Tensor& xv = x.value();
  require_rank2(xv, "repeat_rows");
  if (times == 0) throw ParameterError("repeat_rows: times must be positive");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out({rows * times, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t h = 0; h < times; ++h)
      for (std::size_t c = 0; c < cols; ++c) out.at(r * times + h, c) = xv.at(r, c);
  const std::size_t ix = x.id();
  return t.record(std::move(out), {ix}, [ix, rows, cols, times](Tape& tp, std::size_t self) {
    Tensor* gx = tp.grad_buffer(ix);
    if (!gx) return;
    const Tensor& g = tp.grad(self);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t h = 0; h < times; ++h)
        for (std::size_t c = 0; c < cols; ++c) (*gx)[r * cols + c] += g[(r * times + h) * cols + c];
  });
}

Var frame_diff(Var y, std::size_t frames) {
  Tape& t = *y.tape();
  const Tensor& yv = y.value();
  require_rank2(yv, "frame_diff");
  if (frames < 2 || yv.cols() % frames != 0) {
    throw DimensionError("frame_diff: " + std::to_string(frames) + " frames do not tile " +
                         shape_to_string(yv.shape()));
  }
  const std::size_t rows = yv.rows(), cols = yv.cols(), blocks = cols / frames;
  const std::size_t out_cols = blocks * (frames - 1);
  Tensor out({rows, out_cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t f = 0; f + 1 < frames; ++f)
        out.at(r, b * (frames - 1) + f) = yv.at(r, b * frames + f + 1) - yv.at(r, b * frames + f);
  const std::size_t iy = y.id();
  return t.record(std::move(out), {iy},
                  [iy, rows, cols, blocks, frames, out_cols](Tape& tp, std::size_t self) {
                    Tensor* gy = tp.grad_buffer(iy);
                    if (!gy) return;
                    const Tensor& g = tp.grad(self);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t b = 0; b < blocks; ++b)
                        for (std::size_t f = 0; f + 1 < frames; ++f) {
                          const double gv = g[r * out_cols + b * (frames - 1) + f];
                          (*gy)[r * cols + b * frames + f + 1] += gv;
                          (*gy)[r * cols + b * frames + f] -= gv;
                        }
                  });
}

Var detach(Var x) { return x.tape()->constant(x.value()); }

}  // namespace ducp::ad
