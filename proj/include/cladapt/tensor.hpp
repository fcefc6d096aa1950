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
#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage, clone() makes a
// deep copy. Operations record themselves on the thread's active Tape (see
// TapeScope) whenever at least one input requires a gradient. With no active
// tape nothing is recorded, which is the evaluation path.
//
// All reductions accumulate sequentially in row-major order so results are
// bitwise reproducible, and each output row of a row-wise op depends only on
// the matching input row.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cladapt {

using Shape = std::vector<std::size_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class AutogradError : public Error {
 public:
  using Error::Error;
};

std::string shape_to_string(const Shape& shape);

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when absent
  bool requires_grad = false;
  const Tape* tape = nullptr;
  std::uint64_t tape_generation = 0;
  std::size_t node_id = 0;

  void accumulate_grad(std::span<const double> g);
  std::vector<double>& grad_storage();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  // 2-D accessors; throw DimensionError on other ranks.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double operator()(std::size_t row, std::size_t col) const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();
  void clear_grad();

  // Index of the producing node on the tape, if this tensor was recorded.
  std::optional<std::size_t> node_id() const;

  Tensor clone() const;
  Tensor reshaped(Shape shape) const;  // deep copy with a new shape, detached
  bool shares_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
};

struct TapeNode {
  std::string_view op;
  std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
  std::shared_ptr<detail::TensorImpl> output;
  std::function<void(std::span<const double> out_grad)> backward;
};

// Append-only record of one forward pass. Backward walks the nodes in strict
// reverse append order and may run once per forward.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  static Tape* active();

  // Records `output` as produced by `op` from `inputs`. Returns false (and
  // records nothing) when no input requires a gradient.
  bool record(std::string_view op, std::vector<Tensor> inputs, Tensor& output,
              std::function<void(std::span<const double>)> backward);

 private:
  std::vector<TapeNode> nodes_;
  bool consumed_ = false;
  std::uint64_t generation_;
};

// Installs a tape as the calling thread's active tape for the scope lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// A named trainable tensor. Copying a Parameter deep-copies its value.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor value, bool frozen = false);
  Parameter(const Parameter& other);
  Parameter& operator=(const Parameter& other);
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }
  const Tensor& value() const { return value_; }
  Tensor& value() { return value_; }
  std::size_t numel() const { return value_.numel(); }

  bool frozen() const { return frozen_; }
  void set_frozen(bool frozen);
  void freeze() { set_frozen(true); }
  void unfreeze() { set_frozen(false); }

 private:
  std::string name_;
  Tensor value_;
  bool frozen_ = false;
};

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// x[m×n] + bias[n] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& bias);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);
// Normalizes over the last axis of a 2-D tensor.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
// Multi-head scaled dot-product attention over row blocks of `seq_len` tokens.
// q, k, v are [batch·seq_len × d]; heads split the columns evenly.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t seq_len,
                 std::size_t num_heads);
// Row-stochastic attention weights [batch·heads·seq_len × seq_len]; no tape.
Tensor attention_weights(const Tensor& q, const Tensor& k, std::size_t seq_len,
                         std::size_t num_heads);
// Mean negative log-likelihood of integer labels under row-softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const std::uint32_t> labels);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);

}  // namespace cladapt
