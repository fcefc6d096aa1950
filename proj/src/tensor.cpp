/*
 * Copyright 2026 The cladapt Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "cladapt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

namespace cladapt {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_tape_generation{1};

std::size_t product(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

void require_rank2(const Tensor& t, std::string_view op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " +
                         shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

#ifndef NDEBUG
void check_finite(std::span<const double> data, std::string_view op) {
  for (double v : data) {
    if (!std::isfinite(v)) throw Error(std::string(op) + ": non-finite value in output");
  }
}
#else
void check_finite(std::span<const double>, std::string_view) {}
#endif

Tensor finish(std::string_view op, Shape shape, std::vector<double> data) {
  check_finite(data, op);
  return Tensor(std::move(shape), std::move(data));
}

void record(std::string_view op, std::vector<Tensor> inputs, Tensor& out,
            std::function<void(std::span<const double>)> backward) {
  if (Tape* tape = Tape::active()) tape->record(op, std::move(inputs), out, std::move(backward));
}

// c[m×n] += a[m×k]·b[k×n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m×k] += g[m×n]·b[k×n]ᵀ
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// c[k×n] += a[m×k]ᵀ·g[m×n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<double>& TensorImpl::grad_storage() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

void TensorImpl::accumulate_grad(std::span<const double> g) {
  auto& dst = grad_storage();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace detail

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->data.assign(product(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (product(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_to_string(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw DimensionError("tensor: ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({m, n}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

const Shape& Tensor::shape() const {
  static const Shape empty;
  return impl_ ? impl_->shape : empty;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(shape()));
  }
  return shape()[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return shape()[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return shape()[1];
}

std::span<const double> Tensor::data() const {
  if (!impl_) return {};
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) return {};
  return impl_->data;
}

double Tensor::operator()(std::size_t row, std::size_t col) const {
  return impl_->data[row * cols() + col];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item: tensor of shape " + shape_to_string(shape()) + " is not a scalar");
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (impl_) impl_->requires_grad = value;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!impl_) return {};
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  if (impl_) {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

std::optional<std::size_t> Tensor::node_id() const {
  if (!impl_ || impl_->tape == nullptr) return std::nullopt;
  return impl_->node_id;
}

Tensor Tensor::clone() const {
  if (!impl_) return {};
  return Tensor(impl_->shape, impl_->data);
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), impl_->data); }

// ---- Tape -----------------------------------------------------------------

Tape::Tape() : generation_(g_tape_generation.fetch_add(1)) {}

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

bool Tape::record(std::string_view op, std::vector<Tensor> inputs, Tensor& output,
                  std::function<void(std::span<const double>)> backward) {
  const bool needed = std::any_of(inputs.begin(), inputs.end(),
                                  [](const Tensor& t) { return t.requires_grad(); });
  if (!needed) return false;
  if (consumed_) {
    throw AutogradError("tape: recording on a consumed tape; clear() before the next forward");
  }
  TapeNode node;
  node.op = op;
  node.inputs.reserve(inputs.size());
  for (auto& t : inputs) node.inputs.push_back(t.impl());
  node.output = output.impl();
  node.backward = std::move(backward);
  output.impl_->requires_grad = true;
  output.impl_->tape = this;
  output.impl_->tape_generation = generation_;
  output.impl_->node_id = nodes_.size();
  nodes_.push_back(std::move(node));
  return true;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw AutogradError("backward: loss must be a scalar, got " + shape_to_string(loss.shape()));
  }
  if (consumed_) {
    throw AutogradError("backward: stale tape; run a new forward pass before calling backward again");
  }
  const auto& impl = loss.impl();
  if (impl->tape != this || impl->tape_generation != generation_) {
    throw AutogradError("backward: loss was not recorded on this tape");
  }
  impl->grad.assign(1, 1.0);
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    TapeNode& node = nodes_[i];
    if (node.output->grad.empty()) continue;
    node.backward(node.output->grad);
  }
  consumed_ = true;
}

void Tape::clear() {
  nodes_.clear();
  nodes_.shrink_to_fit();
  consumed_ = false;
  generation_ = g_tape_generation.fetch_add(1);
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

// ---- Parameter ------------------------------------------------------------

Parameter::Parameter(std::string name, Tensor value, bool frozen)
    : name_(std::move(name)), value_(std::move(value)) {
  set_frozen(frozen);
}

Parameter::Parameter(const Parameter& other)
    : name_(other.name_), value_(other.value_.clone()), frozen_(other.frozen_) {
  value_.set_requires_grad(!frozen_);
}

Parameter& Parameter::operator=(const Parameter& other) {
  if (this != &other) {
    name_ = other.name_;
    value_ = other.value_.clone();
    frozen_ = other.frozen_;
    value_.set_requires_grad(!frozen_);
  }
  return *this;
}

void Parameter::set_frozen(bool frozen) {
  frozen_ = frozen;
  value_.set_requires_grad(!frozen);
  if (frozen) value_.clear_grad();
}

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents disagree, " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor result = finish("matmul", {m, n}, std::move(out));
  auto ai = a.impl(), bi = b.impl();
  record("matmul", {a, b}, result, [ai, bi, m, k, n](std::span<const double> g) {
    if (ai->requires_grad) {
      std::vector<double> da(m * k, 0.0);
      gemm_nt(g.data(), bi->data.data(), da.data(), m, k, n);
      ai->accumulate_grad(da);
    }
    if (bi->requires_grad) {
      std::vector<double> db(k * n, 0.0);
      gemm_tn(ai->data.data(), g.data(), db.data(), m, k, n);
      bi->accumulate_grad(db);
    }
  });
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  Tensor result = finish("add", a.shape(), std::move(out));
  auto ai = a.impl(), bi = b.impl();
  record("add", {a, b}, result, [ai, bi](std::span<const double> g) {
    if (ai->requires_grad) ai->accumulate_grad(g);
    if (bi->requires_grad) bi->accumulate_grad(g);
  });
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  Tensor result = finish("sub", a.shape(), std::move(out));
  auto ai = a.impl(), bi = b.impl();
  record("sub", {a, b}, result, [ai, bi](std::span<const double> g) {
    if (ai->requires_grad) ai->accumulate_grad(g);
    if (bi->requires_grad) {
      std::vector<double> neg(g.begin(), g.end());
      for (auto& v : neg) v = -v;
      bi->accumulate_grad(neg);
    }
  });
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  Tensor result = finish("mul", a.shape(), std::move(out));
  auto ai = a.impl(), bi = b.impl();
  record("mul", {a, b}, result, [ai, bi](std::span<const double> g) {
    const std::size_t n = g.size();
    if (ai->requires_grad) {
      std::vector<double> da(n);
      for (std::size_t i = 0; i < n; ++i) da[i] = g[i] * bi->data[i];
      ai->accumulate_grad(da);
    }
    if (bi->requires_grad) {
      std::vector<double> db(n);
      for (std::size_t i = 0; i < n; ++i) db[i] = g[i] * ai->data[i];
      bi->accumulate_grad(db);
    }
  });
  return result;
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * factor;
  Tensor result = finish("scale", x.shape(), std::move(out));
  auto xi = x.impl();
  record("scale", {x}, result, [xi, factor](std::span<const double> g) {
    std::vector<double> dx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * factor;
    xi->accumulate_grad(dx);
  });
  return result;
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_row");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.numel() != n) {
    throw DimensionError("add_row: bias " + shape_to_string(bias.shape()) +
                         " does not match row width of " + shape_to_string(x.shape()));
  }
  std::vector<double> out(m * n);
  auto xd = x.data(), bd = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] + bd[j];
  Tensor result = finish("add_row", x.shape(), std::move(out));
  auto xi = x.impl(), bi = bias.impl();
  record("add_row", {x, bias}, result, [xi, bi, m, n](std::span<const double> g) {
    if (xi->requires_grad) xi->accumulate_grad(g);
    if (bi->requires_grad) {
      std::vector<double> db(n, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
      bi->accumulate_grad(db);
    }
  });
  return result;
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xd[i];
    // Branch on sign so exp never overflows.
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  Tensor result = finish("sigmoid", x.shape(), std::move(out));
  auto xi = x.impl();
  auto yi = result.impl();
  record("sigmoid", {x}, result, [xi, yi](std::span<const double> g) {
    std::vector<double> dx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = yi->data[i];
      dx[i] = g[i] * y * (1.0 - y);
    }
    xi->accumulate_grad(dx);
  });
  return result;
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * xd[i] * (1.0 + std::erf(xd[i] * kInvSqrt2));
  }
  Tensor result = finish("gelu", x.shape(), std::move(out));
  auto xi = x.impl();
  record("gelu", {x}, result, [xi](std::span<const double> g) {
    std::vector<double> dx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xi->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      dx[i] = g[i] * (cdf + v * pdf);
    }
    xi->accumulate_grad(dx);
  });
  return result;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " +
                         shape_to_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -INFINITY;
      for (std::size_t t = 0; t < len; ++t) mx = std::max(mx, xd[base + t * inner]);
      double total = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        const double e = std::exp(xd[base + t * inner] - mx);
        out[base + t * inner] = e;
        total += e;
      }
      for (std::size_t t = 0; t < len; ++t) out[base + t * inner] /= total;
    }
  }
  Tensor result = finish("softmax", shape, std::move(out));
  auto xi = x.impl();
  auto yi = result.impl();
  record("softmax", {x}, result, [xi, yi, outer, inner, len](std::span<const double> g) {
    std::vector<double> dx(g.size());
    const auto& y = yi->data;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t t = 0; t < len; ++t) dot += g[base + t * inner] * y[base + t * inner];
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t idx = base + t * inner;
          dx[idx] = y[idx] * (g[idx] - dot);
        }
      }
    }
    xi->accumulate_grad(dx);
  });
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.numel() != n || beta.numel() != n) {
    throw DimensionError("layer_norm: affine parameters do not match width of " +
                         shape_to_string(x.shape()));
  }
  std::vector<double> out(m * n), xhat(m * n), inv_std(m);
  auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xd.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * inv_std[i];
      xhat[i * n + j] = h;
      out[i * n + j] = gd[j] * h + bd[j];
    }
  }
  Tensor result = finish("layer_norm", x.shape(), std::move(out));
  auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  record("layer_norm", {x, gamma, beta}, result,
         [xi, gi, bi, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
             std::span<const double> g) {
           if (gi->requires_grad || bi->requires_grad) {
             std::vector<double> dg(n, 0.0), db(n, 0.0);
             for (std::size_t i = 0; i < m; ++i)
               for (std::size_t j = 0; j < n; ++j) {
                 dg[j] += g[i * n + j] * xhat[i * n + j];
                 db[j] += g[i * n + j];
               }
             if (gi->requires_grad) gi->accumulate_grad(dg);
             if (bi->requires_grad) bi->accumulate_grad(db);
           }
           if (xi->requires_grad) {
             std::vector<double> dx(m * n);
             const double inv_n = 1.0 / static_cast<double>(n);
             for (std::size_t i = 0; i < m; ++i) {
               double mean_dh = 0.0, mean_dh_h = 0.0;
               for (std::size_t j = 0; j < n; ++j) {
                 const double dh = g[i * n + j] * gi->data[j];
                 mean_dh += dh;
                 mean_dh_h += dh * xhat[i * n + j];
               }
               mean_dh *= inv_n;
               mean_dh_h *= inv_n;
               for (std::size_t j = 0; j < n; ++j) {
                 const double dh = g[i * n + j] * gi->data[j];
                 dx[i * n + j] = inv_std[i] * (dh - mean_dh - xhat[i * n + j] * mean_dh_h);
               }
             }
             xi->accumulate_grad(dx);
           }
         });
  return result;
}

namespace {

struct AttentionDims {
  std::size_t rows, width, seq, heads, head_dim, batch;
};

AttentionDims attention_dims(const Tensor& q, const Tensor& k, std::size_t seq_len,
                             std::size_t num_heads, std::string_view op) {
  require_rank2(q, op);
  require_rank2(k, op);
  require_same_shape(q, k, op);
  const std::size_t rows = q.rows(), width = q.cols();
  if (seq_len == 0 || rows % seq_len != 0) {
    throw DimensionError(std::string(op) + ": " + std::to_string(rows) +
                         " rows are not a multiple of sequence length " + std::to_string(seq_len));
  }
  if (num_heads == 0 || width % num_heads != 0) {
    throw DimensionError(std::string(op) + ": width " + std::to_string(width) +
                         " not divisible by " + std::to_string(num_heads) + " heads");
  }
  return {rows, width, seq_len, num_heads, width / num_heads, rows / seq_len};
}

// Fills probs[(b·H + h)·n·n + i·n + j].
std::vector<double> attention_probs(std::span<const double> q, std::span<const double> k,
                                    const AttentionDims& d) {
  const std::size_t n = d.seq, w = d.width, dk = d.head_dim;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> probs(d.batch * d.heads * n * n);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t h = 0; h < d.heads; ++h) {
      double* p = probs.data() + (b * d.heads + h) * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        const double* qi = q.data() + (b * n + i) * w + h * dk;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
          const double* kj = k.data() + (b * n + j) * w + h * dk;
          double s = 0.0;
          for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
          s *= inv_scale;
          p[i * n + j] = s;
          mx = std::max(mx, s);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          p[i * n + j] = std::exp(p[i * n + j] - mx);
          total += p[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) p[i * n + j] /= total;
      }
    }
  }
  return probs;
}

}  // namespace

Tensor attention_weights(const Tensor& q, const Tensor& k, std::size_t seq_len,
                         std::size_t num_heads) {
  const auto d = attention_dims(q, k, seq_len, num_heads, "attention_weights");
  return Tensor({d.batch * d.heads * d.seq, d.seq}, attention_probs(q.data(), k.data(), d));
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t seq_len,
                 std::size_t num_heads) {
  const auto d = attention_dims(q, k, seq_len, num_heads, "attention");
  require_same_shape(q, v, "attention");
  std::vector<double> probs = attention_probs(q.data(), k.data(), d);
  const std::size_t n = d.seq, w = d.width, dk = d.head_dim;
  std::vector<double> out(d.rows * w, 0.0);
  auto vd = v.data();
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t h = 0; h < d.heads; ++h) {
      const double* p = probs.data() + (b * d.heads + h) * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        double* oi = out.data() + (b * n + i) * w + h * dk;
        for (std::size_t j = 0; j < n; ++j) {
          const double pij = p[i * n + j];
          const double* vj = vd.data() + (b * n + j) * w + h * dk;
          for (std::size_t c = 0; c < dk; ++c) oi[c] += pij * vj[c];
        }
      }
    }
  }
  Tensor result = finish("attention", q.shape(), std::move(out));
  auto qi = q.impl(), ki = k.impl(), vi = v.impl();
  record("attention", {q, k, v}, result,
         [qi, ki, vi, d, probs = std::move(probs)](std::span<const double> g) {
           const std::size_t n = d.seq, w = d.width, dk = d.head_dim;
           const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk));
           std::vector<double> dq(d.rows * w, 0.0), dkey(d.rows * w, 0.0), dv(d.rows * w, 0.0);
           std::vector<double> dp(n * n), ds(n * n);
           for (std::size_t b = 0; b < d.batch; ++b) {
             for (std::size_t h = 0; h < d.heads; ++h) {
               const double* p = probs.data() + (b * d.heads + h) * n * n;
               // dP = dO·Vᵀ, dV = Pᵀ·dO
               for (std::size_t i = 0; i < n; ++i) {
                 const double* gi = g.data() + (b * n + i) * w + h * dk;
                 for (std::size_t j = 0; j < n; ++j) {
                   const double* vj = vi->data.data() + (b * n + j) * w + h * dk;
                   double s = 0.0;
                   for (std::size_t c = 0; c < dk; ++c) s += gi[c] * vj[c];
                   dp[i * n + j] = s;
                   double* dvj = dv.data() + (b * n + j) * w + h * dk;
                   const double pij = p[i * n + j];
                   for (std::size_t c = 0; c < dk; ++c) dvj[c] += pij * gi[c];
                 }
               }
               // dS = P ⊙ (dP − rowsum(dP ⊙ P))
               for (std::size_t i = 0; i < n; ++i) {
                 double dot = 0.0;
                 for (std::size_t j = 0; j < n; ++j) dot += dp[i * n + j] * p[i * n + j];
                 for (std::size_t j = 0; j < n; ++j)
                   ds[i * n + j] = p[i * n + j] * (dp[i * n + j] - dot) * inv_scale;
               }
               for (std::size_t i = 0; i < n; ++i) {
                 double* dqi = dq.data() + (b * n + i) * w + h * dk;
                 const double* qrow = qi->data.data() + (b * n + i) * w + h * dk;
                 for (std::size_t j = 0; j < n; ++j) {
                   const double sij = ds[i * n + j];
                   const double* kj = ki->data.data() + (b * n + j) * w + h * dk;
                   double* dkj = dkey.data() + (b * n + j) * w + h * dk;
                   for (std::size_t c = 0; c < dk; ++c) {
                     dqi[c] += sij * kj[c];
                     dkj[c] += sij * qrow[c];
                   }
                 }
               }
             }
           }
           if (qi->requires_grad) qi->accumulate_grad(dq);
           if (ki->requires_grad) ki->accumulate_grad(dkey);
           if (vi->requires_grad) vi->accumulate_grad(dv);
         });
  return result;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::uint32_t> labels) {
  require_rank2(logits, "cross_entropy");
  const std::size_t m = logits.rows(), c = logits.cols();
  if (labels.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(m) + " rows");
  }
  if (m == 0) throw DimensionError("cross_entropy: empty batch");
  std::vector<double> probs(m * c);
  auto ld = logits.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] >= c) {
      throw DimensionError("cross_entropy: label " + std::to_string(labels[i]) +
                           " out of range for " + std::to_string(c) + " classes");
    }
    const double* row = ld.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      total += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= total;
    loss += -(row[labels[i]] - mx - std::log(total));
  }
  loss /= static_cast<double>(m);
  Tensor result = finish("cross_entropy", {1}, {loss});
  auto li = logits.impl();
  std::vector<std::uint32_t> saved(labels.begin(), labels.end());
  record("cross_entropy", {logits}, result,
         [li, m, c, probs = std::move(probs), saved = std::move(saved)](std::span<const double> g) {
           std::vector<double> dl(probs);
           const double factor = g[0] / static_cast<double>(m);
           for (std::size_t i = 0; i < m; ++i) {
             dl[i * c + saved[i]] -= 1.0;
             for (std::size_t j = 0; j < c; ++j) dl[i * c + j] *= factor;
           }
           li->accumulate_grad(dl);
         });
  return result;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor result = finish("sum", {1}, {total});
  auto xi = x.impl();
  record("sum", {x}, result, [xi](std::span<const double> g) {
    std::vector<double> dx(xi->data.size(), g[0]);
    xi->accumulate_grad(dx);
  });
  return result;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank2(x, "gather_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(rows.size() * n);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= m) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[r]) + " out of range for " +
                           shape_to_string(x.shape()));
    }
    std::copy_n(xd.data() + rows[r] * n, n, out.data() + r * n);
  }
  Tensor result = finish("gather_rows", {rows.size(), n}, std::move(out));
  auto xi = x.impl();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  record("gather_rows", {x}, result, [xi, n, idx = std::move(idx)](std::span<const double> g) {
    auto& dx = xi->grad_storage();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) dx[idx[r] * n + j] += g[r * n + j];
  });
  return result;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) {
      throw DimensionError("concat_rows: width mismatch " + shape_to_string(parts.front().shape()) +
                           " vs " + shape_to_string(p.shape()));
    }
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * n);
  std::vector<std::shared_ptr<detail::TensorImpl>> impls;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
    impls.push_back(p.impl());
  }
  Tensor result = finish("concat_rows", {total, n}, std::move(out));
  record("concat_rows", std::vector<Tensor>(parts.begin(), parts.end()), result,
         [impls = std::move(impls), offsets = std::move(offsets)](std::span<const double> g) {
           for (std::size_t i = 0; i < impls.size(); ++i) {
             if (!impls[i]->requires_grad) continue;
             impls[i]->accumulate_grad(g.subspan(offsets[i], impls[i]->data.size()));
           }
         });
  return result;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank2(x, "slice_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (begin + count > m) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " +
                         shape_to_string(x.shape()));
  }
  auto xd = x.data();
  std::vector<double> out(xd.begin() + static_cast<std::ptrdiff_t>(begin * n),
                          xd.begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  Tensor result = finish("slice_rows", {count, n}, std::move(out));
  auto xi = x.impl();
  record("slice_rows", {x}, result, [xi, begin, n](std::span<const double> g) {
    double* dst = xi->grad_storage().data() + begin * n;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
  return result;
}

}  // namespace cladapt
