// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "ivt/errors.hpp"
#include "ivt/rng.hpp"

namespace ivt {

using detail::Node;

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void require_shape(const Shape& shape) {
  for (std::size_t d : shape)
    if (d == 0) throw DimensionError("zero-sized dimension in shape " + shape_str(shape));
}

[[maybe_unused]] void check_finite(const std::vector<double>& v, const char* op) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw NumericError(std::string("non-finite output of ") + op + " at index " +
                         std::to_string(i));
}

bool wants_grad(const std::shared_ptr<Node>& n) { return n && n->requires_grad; }

// grad buffer of parent i, or nullptr when it does not take gradients.
double* pgrad(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? p->grad.data() : nullptr;
}

const std::vector<double>& pval(Node& self, std::size_t i) { return self.parents[i]->value; }

std::pair<std::size_t, std::size_t> as_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  return {t.dim(0), t.dim(1)};
}

Tensor unary(const Tensor& a, const char* op, double (*f)(double), double (*df)(double, double)) {
  std::vector<double> out(a.size());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor::make(a.shape(), std::move(out), {a},
                      [df](Node& self) {
                        double* g = pgrad(self, 0);
                        if (!g) return;
                        const auto& x = pval(self, 0);
                        for (std::size_t i = 0; i < x.size(); ++i)
                          g[i] += self.grad[i] * df(x[i], self.value[i]);
                      },
                      op);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  require_shape(shape);
  std::vector<double> v(numel(shape), value);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  require_shape(shape);
  if (numel(shape) != values.size())
    throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank())
    throw BoundsError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return shape()[axis];
}

std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw ContractError("use of an undefined tensor");
  if (!node_->parents.empty()) throw ContractError("mutable_data on a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size())
    throw DimensionError("index rank " + std::to_string(index.size()) + " vs shape " + shape_str(s));
  std::size_t flat = 0, axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis])
      throw BoundsError("index " + std::to_string(i) + " out of range on axis " +
                        std::to_string(axis) + " of " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->parents.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }
Tensor Tensor::clone(bool requires_grad) const { return from(shape(), node_->value, requires_grad); }
const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor Tensor::make(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                    std::function<void(Node&)> backward, const char* op) {
#ifdef IVT_CHECK_FINITE
  check_finite(value, op);
#endif
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& p) { return wants_grad(p.node_); });
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_);
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

// ---- matmul / linear --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto [m, k] = as_matrix(a, "matmul");
  const auto [k2, n] = as_matrix(b, "matmul");
  if (k != k2)
    throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  std::vector<double> out(m * n);
  kernels::gemm({false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false});
  return Tensor::make({m, n}, std::move(out), {a, b},
                      [m, n, k](Node& self) {
                        const double* dc = self.grad.data();
                        if (double* da = pgrad(self, 0))
                          kernels::gemm({false, true, m, k, n, dc, pval(self, 1).data(), da, true});
                        if (double* db = pgrad(self, 1))
                          kernels::gemm({true, false, k, n, m, pval(self, 0).data(), dc, db, true});
                      },
                      "matmul");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const auto [rows, in] = as_matrix(x, "linear");
  const auto [in2, out] = as_matrix(w, "linear");
  if (in != in2)
    throw DimensionError("linear input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != out))
    throw DimensionError("linear bias " + shape_str(bias.shape()) + " vs weight " +
                         shape_str(w.shape()));
  std::vector<double> y(rows * out);
  if (has_bias) {
    const auto b = bias.data();
    for (std::size_t r = 0; r < rows; ++r) std::copy(b.begin(), b.end(), y.begin() + r * out);
  }
  kernels::gemm({false, false, rows, out, in, x.data().data(), w.data().data(), y.data(), has_bias});
  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return Tensor::make({rows, out}, std::move(y), std::move(parents),
                      [rows, in, out, has_bias](Node& self) {
                        const double* dy = self.grad.data();
                        if (double* dx = pgrad(self, 0))
                          kernels::gemm({false, true, rows, in, out, dy, pval(self, 1).data(), dx, true});
                        if (double* dw = pgrad(self, 1))
                          kernels::gemm({true, false, in, out, rows, pval(self, 0).data(), dy, dw, true});
                        if (has_bias) {
                          if (double* db = pgrad(self, 2))
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < out; ++j) db[j] += dy[r * out + j];
                        }
                      },
                      "linear");
}

// ---- elementwise -------------------------------------------------------------

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b) {
  const bool a_scalar = a.rank() == 0, b_scalar = b.rank() == 0;
  if (!a_scalar && !b_scalar && a.shape() != b.shape())
    throw DimensionError("elementwise shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const Shape shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = numel(shape);
  const auto av = a.data(), bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[a_scalar ? 0 : i], y = bv[b_scalar ? 0 : i];
    out[i] = op == Elementwise::add ? x + y : op == Elementwise::sub ? x - y : x * y;
  }
  static constexpr const char* names[] = {"add", "sub", "mul"};
  return Tensor::make(shape, std::move(out), {a, b},
                      [op, a_scalar, b_scalar, n](Node& self) {
                        const double* g = self.grad.data();
                        const auto& x = pval(self, 0);
                        const auto& y = pval(self, 1);
                        if (double* ga = pgrad(self, 0)) {
                          for (std::size_t i = 0; i < n; ++i) {
                            const double d = op == Elementwise::mul ? g[i] * y[b_scalar ? 0 : i] : g[i];
                            ga[a_scalar ? 0 : i] += d;
                          }
                        }
                        if (double* gb = pgrad(self, 1)) {
                          for (std::size_t i = 0; i < n; ++i) {
                            const double d = op == Elementwise::add   ? g[i]
                                             : op == Elementwise::sub ? -g[i]
                                                                      : g[i] * x[a_scalar ? 0 : i];
                            gb[b_scalar ? 0 : i] += d;
                          }
                        }
                      },
                      names[static_cast<int>(op)]);
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::mul, a, b); }

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return Tensor::make(a.shape(), std::move(out), {a},
                      [s](Node& self) {
                        if (double* g = pgrad(self, 0))
                          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += s * self.grad[i];
                      },
                      "scale");
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += s;
  return Tensor::make(a.shape(), std::move(out), {a},
                      [](Node& self) {
                        if (double* g = pgrad(self, 0))
                          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                      },
                      "add_scalar");
}

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.data())
    if (v < 0.0) throw NumericError("sqrt of negative value " + std::to_string(v));
  return unary(a, "sqrt", [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Tensor relu(const Tensor& a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  return unary(
      a, "gelu",
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); },
      [](double x, double) {
        const double u = kGeluC * (x + kGeluA * x * x * x);
        const double t = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor& a) {
  return unary(a, "abs", [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---- reductions -----------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::make({}, {s}, {a},
                      [](Node& self) {
                        if (double* g = pgrad(self, 0)) {
                          const std::size_t n = self.parents[0]->value.size();
                          for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
                        }
                      },
                      "sum");
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor reduce(const Tensor& a, std::size_t axis, Reduction how) {
  const auto& s = a.shape();
  if (axis >= s.size())
    throw BoundsError("reduce axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  const double f = how == Reduction::mean ? 1.0 / static_cast<double>(len) : 1.0;
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  std::vector<double> out(outer * inner, 0.0);
  const auto in = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += in[(o * len + l) * inner + i];
  for (auto& v : out) v *= f;
  return Tensor::make(std::move(out_shape), std::move(out), {a},
                      [outer, inner, len, f](Node& self) {
                        double* g = pgrad(self, 0);
                        if (!g) return;
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t l = 0; l < len; ++l)
                            for (std::size_t i = 0; i < inner; ++i)
                              g[(o * len + l) * inner + i] += f * self.grad[o * inner + i];
                      },
                      how == Reduction::sum ? "reduce_sum" : "reduce_mean");
}

// ---- structure -------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  require_shape(shape);
  if (numel(shape) != a.size())
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                         " changes the element count");
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::make(std::move(shape), std::move(out), {a},
                      [](Node& self) {
                        if (double* g = pgrad(self, 0))
                          for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                      },
                      "reshape");
}

Tensor take(const Tensor& a, std::vector<std::size_t> flat_indices, Shape shape) {
  require_shape(shape);
  if (numel(shape) != flat_indices.size())
    throw DimensionError("take: " + std::to_string(flat_indices.size()) + " indices for shape " +
                         shape_str(shape));
  const auto in = a.data();
  std::vector<double> out(flat_indices.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (flat_indices[i] >= in.size())
      throw BoundsError("take: index " + std::to_string(flat_indices[i]) + " out of range for " +
                        std::to_string(in.size()) + " elements");
    out[i] = in[flat_indices[i]];
  }
  return Tensor::make(std::move(shape), std::move(out), {a},
                      [idx = std::move(flat_indices)](Node& self) {
                        if (double* g = pgrad(self, 0))
                          for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
                      },
                      "take");
}

Tensor transpose(const Tensor& a, const std::vector<std::size_t>& axes) {
  const auto& s = a.shape();
  if (axes.size() != s.size())
    throw DimensionError("transpose: " + std::to_string(axes.size()) + " axes for " + shape_str(s));
  std::vector<bool> seen(s.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= s.size() || seen[ax])
      throw BoundsError("transpose: invalid axis " + std::to_string(ax) + " for " + shape_str(s));
    seen[ax] = true;
  }
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out_shape[i] = s[axes[i]];
  std::vector<std::size_t> in_strides(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  const std::size_t n = a.size();
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(s.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < s.size(); ++i) src += counter[i] * in_strides[axes[i]];
    idx[flat] = src;
    for (std::size_t i = s.size(); i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return take(a, std::move(idx), std::move(out_shape));
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& s = a.shape();
  if (axis >= s.size())
    throw BoundsError("slice axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  if (length == 0 || start + length > s[axis])
    throw BoundsError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                      ") out of range on axis " + std::to_string(axis) + " of " + shape_str(s));
  std::vector<std::size_t> rows(length);
  std::iota(rows.begin(), rows.end(), start);
  return gather(a, rows, axis);
}

Tensor gather(const Tensor& a, const std::vector<std::size_t>& indices, std::size_t axis) {
  const auto& s = a.shape();
  if (axis >= s.size())
    throw BoundsError("gather axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  if (indices.empty()) throw DimensionError("gather with no indices");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  for (std::size_t ix : indices)
    if (ix >= s[axis])
      throw BoundsError("gather index " + std::to_string(ix) + " out of range on axis " +
                        std::to_string(axis) + " of " + shape_str(s));
  Shape out_shape = s;
  out_shape[axis] = indices.size();
  std::vector<std::size_t> flat;
  flat.reserve(outer * indices.size() * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t ix : indices)
      for (std::size_t i = 0; i < inner; ++i) flat.push_back((o * s[axis] + ix) * inner + i);
  return take(a, std::move(flat), std::move(out_shape));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size())
    throw BoundsError("concat axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok)
      throw DimensionError("concat shape mismatch: " + shape_str(s0) + " vs " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<double> out;
  out.reserve(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o)
    for (const auto& p : parts) {
      const std::size_t chunk = p.dim(axis) * inner;
      const auto d = p.data();
      out.insert(out.end(), d.begin() + o * chunk, d.begin() + (o + 1) * chunk);
    }
  std::vector<std::size_t> chunks;
  for (const auto& p : parts) chunks.push_back(p.dim(axis) * inner);
  return Tensor::make(std::move(out_shape), std::move(out), parts,
                      [outer, chunks](Node& self) {
                        std::size_t pos = 0;
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t p = 0; p < chunks.size(); ++p) {
                            if (double* g = pgrad(self, p))
                              for (std::size_t i = 0; i < chunks[p]; ++i)
                                g[o * chunks[p] + i] += self.grad[pos + i];
                            pos += chunks[p];
                          }
                      },
                      "concat");
}

// ---- nn primitives --------------------------------------------------------------

Tensor softmax_rows(const Tensor& a) {
  if (a.rank() == 0) throw DimensionError("softmax_rows of a scalar");
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.size() / d;
  const auto in = a.data();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in.data() + r * d;
    double* y = out.data() + r * d;
    const double mx = *std::max_element(x, x + d);
    double denom = 0.0;
    for (std::size_t j = 0; j < d; ++j) denom += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < d; ++j) y[j] /= denom;
  }
  return Tensor::make(a.shape(), std::move(out), {a},
                      [rows, d](Node& self) {
                        double* g = pgrad(self, 0);
                        if (!g) return;
                        for (std::size_t r = 0; r < rows; ++r) {
                          const double* y = self.value.data() + r * d;
                          const double* dy = self.grad.data() + r * d;
                          double dot = 0.0;
                          for (std::size_t j = 0; j < d; ++j) dot += dy[j] * y[j];
                          for (std::size_t j = 0; j < d; ++j) g[r * d + j] += y[j] * (dy[j] - dot);
                        }
                      },
                      "softmax_rows");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0.0)) throw ConfigError("layer_norm eps must be positive");
  if (x.rank() == 0) throw DimensionError("layer_norm of a scalar");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw DimensionError("layer_norm gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " vs rows of " + shape_str(x.shape()));
  const std::size_t rows = x.size() / d;
  const auto in = x.data(), g = gain.data(), b = bias.data();
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = g[j] * h + b[j];
    }
  }
  return Tensor::make(x.shape(), std::move(out), {x, gain, bias},
                      [rows, d, xhat, inv_std](Node& self) {
                        const double* dy = self.grad.data();
                        const auto& gv = pval(self, 1);
                        if (double* dx = pgrad(self, 0)) {
                          std::vector<double> dh(d);
                          for (std::size_t r = 0; r < rows; ++r) {
                            double m1 = 0.0, m2 = 0.0;
                            for (std::size_t j = 0; j < d; ++j) {
                              dh[j] = dy[r * d + j] * gv[j];
                              m1 += dh[j];
                              m2 += dh[j] * (*xhat)[r * d + j];
                            }
                            m1 /= static_cast<double>(d);
                            m2 /= static_cast<double>(d);
                            for (std::size_t j = 0; j < d; ++j)
                              dx[r * d + j] += (*inv_std)[r] * (dh[j] - m1 - (*xhat)[r * d + j] * m2);
                          }
                        }
                        if (double* dg = pgrad(self, 1))
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < d; ++j) dg[j] += dy[r * d + j] * (*xhat)[r * d + j];
                        if (double* db = pgrad(self, 2))
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < d; ++j) db[j] += dy[r * d + j];
                      },
                      "layer_norm");
}

Tensor attention_op(const Tensor& q, const Tensor& k, const Tensor& v,
                    const kernels::AttentionLayout& layout) {
  const auto [nq, d] = as_matrix(q, "attention");
  const auto [nk, dk] = as_matrix(k, "attention");
  if (d == 0) throw ContractError("attention feature dimension is zero");
  if (dk != d || v.shape() != k.shape())
    throw DimensionError("attention operand shapes differ: Q" + shape_str(q.shape()) + " K" +
                         shape_str(k.shape()) + " V" + shape_str(v.shape()));
  if (layout.heads == 0 || d % layout.heads != 0)
    throw ConfigError("feature dim " + std::to_string(d) + " not divisible by " +
                      std::to_string(layout.heads) + " heads");
  for (const auto& g : layout.groups) {
    if (g.q_begin + g.q_count > nq || g.k_begin + g.k_count > nk)
      throw BoundsError("attention group exceeds operand rows");
    if (g.k_count == 0) throw ContractError("attention group with no keys");
  }
  const kernels::AttentionShapes s{nq, nk, d};
  std::vector<double> out(nq * d, 0.0);
  auto probs = std::make_shared<std::vector<double>>(layout.prob_size());
  kernels::attention_forward(layout, s, q.data().data(), k.data().data(), v.data().data(),
                             out.data(), probs->data());
  return Tensor::make({nq, d}, std::move(out), {q, k, v},
                      [layout, s, probs](Node& self) {
                        kernels::attention_backward(layout, s, pval(self, 0).data(),
                                                    pval(self, 1).data(), pval(self, 2).data(),
                                                    probs->data(), self.grad.data(),
                                                    pgrad(self, 0), pgrad(self, 1), pgrad(self, 2));
                      },
                      "attention");
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  const bool batched = x.rank() == 4;
  if (x.rank() != 3 && !batched)
    throw DimensionError("conv2d expects [C,H,W] or [B,C,H,W], got " + shape_str(x.shape()));
  if (w.rank() != 4 || w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0)
    throw DimensionError("conv2d weight must be [O,C,k,k] with odd k, got " + shape_str(w.shape()));
  kernels::ConvShapes s;
  s.batch = batched ? x.dim(0) : 1;
  s.in_ch = x.dim(batched ? 1 : 0);
  s.height = x.dim(batched ? 2 : 1);
  s.width = x.dim(batched ? 3 : 2);
  s.out_ch = w.dim(0);
  s.ksize = w.dim(2);
  if (w.dim(1) != s.in_ch)
    throw ConfigError("conv2d channel mismatch: input " + shape_str(x.shape()) + ", weight " +
                      shape_str(w.shape()));
  const bool has_bias = b.defined();
  if (has_bias && b.shape() != Shape{s.out_ch})
    throw DimensionError("conv2d bias " + shape_str(b.shape()) + " vs " + std::to_string(s.out_ch) +
                         " output channels");
  std::vector<double> y(s.batch * s.out_ch * s.height * s.width);
  kernels::conv2d_forward(s, x.data().data(), w.data().data(), has_bias ? b.data().data() : nullptr,
                          y.data());
  Shape out_shape = batched ? Shape{s.batch, s.out_ch, s.height, s.width}
                            : Shape{s.out_ch, s.height, s.width};
  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(b);
  return Tensor::make(std::move(out_shape), std::move(y), std::move(parents),
                      [s, has_bias](Node& self) {
                        kernels::conv2d_backward(s, pval(self, 0).data(), pval(self, 1).data(),
                                                 self.grad.data(), pgrad(self, 0), pgrad(self, 1),
                                                 has_bias ? pgrad(self, 2) : nullptr);
                      },
                      "conv2d");
}

// ---- differentiation ------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward expects a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; parents visited in operand order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->grad.assign(n->value.size(), 0.0);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, double eps,
                           const GradCheckOptions& options) {
  if (!(eps >= 1e-7 && eps <= 1e-4))
    throw ContractError("grad_check eps must lie in [1e-7, 1e-4], got " + std::to_string(eps));
  if (!x.requires_grad() || !x.is_leaf())
    throw ContractError("grad_check needs a leaf tensor that requires grad");
  const Tensor y = f(x);
  backward(y);
  std::vector<double> analytic(x.size(), 0.0);
  if (!x.grad().empty()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

  std::vector<std::size_t> probes(x.size());
  std::iota(probes.begin(), probes.end(), 0);
  if (options.max_probes && options.max_probes < probes.size()) {
    Rng rng(options.seed);
    for (std::size_t i = probes.size(); i > 1; --i) std::swap(probes[i - 1], probes[rng.below(i)]);
    probes.resize(options.max_probes);
    std::sort(probes.begin(), probes.end());
  }

  GradCheckResult result;
  auto values = x.mutable_data();
  for (std::size_t idx : probes) {
    const double orig = values[idx];
    values[idx] = orig + eps;
    const double fp = f(x).item();
    values[idx] = orig - eps;
    const double fm = f(x).item();
    values[idx] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    if (!std::isfinite(numeric) || !std::isfinite(analytic[idx]))
      throw NumericError("grad_check: non-finite probe at component " + std::to_string(idx));
    const double denom = std::max({1.0, std::fabs(analytic[idx]), std::fabs(numeric)});
    const double rel = std::fabs(analytic[idx] - numeric) / denom;
    if (rel > result.max_relative_error || result.probes == 0) {
      result.max_relative_error = std::max(result.max_relative_error, rel);
      if (rel >= result.max_relative_error) result.worst_index = idx;
    }
    ++result.probes;
  }
  return result;
}

}  // namespace ivt
