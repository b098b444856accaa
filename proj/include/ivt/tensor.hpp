// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// Dense row-major f64 tensors with reverse-mode differentiation.
//
// Every op returns a fresh tensor. When any operand requires a gradient the
// result records its operands and a backward rule, forming a DAG that
// `backward()` walks in reverse topological order. The graph is rebuilt by
// every forward pass; nothing is cached across passes.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ivt/kernels.hpp"

namespace ivt {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  /// Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  /// Writable view of a leaf's storage (optimizers, gradient probes).
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool is_leaf() const;
  /// Empty until a backward pass reached this tensor.
  std::span<const double> grad() const;

  /// Same values, no graph history, no gradient.
  Tensor detach() const;
  /// Copy of the values as a new leaf.
  Tensor clone(bool requires_grad = false) const;

  const char* op_name() const;

  // Internal: op construction.
  static Tensor make(Shape shape, std::vector<double> value,
                     std::vector<Tensor> parents, std::function<void(detail::Node&)> backward,
                     const char* op);
  detail::Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

// ---- arithmetic -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[n×in]·w[in×out] + bias[out] (bias broadcast over rows; bias may be undefined).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

enum class Elementwise { add, sub, mul };
Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor exp(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);
/// Tanh approximation: 0.5·x·(1 + tanh(sqrt(2/pi)·(x + 0.044715·x³))).
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);

// ---- reductions ---------------------------------------------------------------

enum class Reduction { sum, mean };
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Reduces one axis away.
Tensor reduce(const Tensor& a, std::size_t axis, Reduction how);

// ---- structure ------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
/// Selects `indices` along `axis` (repeats allowed); backward scatters additively.
Tensor gather(const Tensor& a, const std::vector<std::size_t>& indices, std::size_t axis);
/// out.flat[i] = a.flat[flat_indices[i]] with the given shape; backward scatters additively.
Tensor take(const Tensor& a, std::vector<std::size_t> flat_indices, Shape shape);

// ---- neural-net primitives ----------------------------------------------------

Tensor softmax_rows(const Tensor& a);
/// Row-wise normalisation to zero mean / unit variance, then gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
/// Grouped multi-head scaled dot-product attention (see kernels::AttentionLayout).
Tensor attention_op(const Tensor& q, const Tensor& k, const Tensor& v,
                    const kernels::AttentionLayout& layout);
/// x[B×C×H×W] or [C×H×W], w[O×C×k×k], b[O] (may be undefined); stride 1, zero padding k/2.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- differentiation ----------------------------------------------------------

/// Populates grad of every requires-grad tensor reachable from `loss`.
/// Grads of the reachable graph are reset first, so repeated calls on the
/// same graph give identical results.
void backward(const Tensor& loss);

struct GradCheckOptions {
  /// Probe at most this many components (0 = all), chosen by a seeded shuffle.
  std::size_t max_probes = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t probes = 0;
};

/// Compares backward() against central differences; relative error is
/// |analytic - numeric| / max(1, |analytic|, |numeric|). `x` must be a leaf
/// requiring grad; `f` must rebuild its graph from `x` on every call.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, double eps,
                           const GradCheckOptions& options = {});

}  // namespace ivt
