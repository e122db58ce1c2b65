#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mmerc/common.hpp"

namespace mmerc {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// One node of the reverse-mode tape. The tape is rebuilt on every forward
// pass: each operation allocates a fresh node whose `backprop` closure
// scatters d(output) into the parents' grad buffers. Nodes own their parents
// through shared_ptr, so a whole expression tree stays alive exactly as long
// as some Tensor handle still points into it.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;

  double* grad_buf() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad.data();
  }
};

// Value-semantics handle over a tape node. Cheap to copy; copies share the
// underlying storage. Tensors that do not require gradients are treated as
// immutable constants once built.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data) {
    require(numel(shape) == data.size(),
            detail::msg("tensor: shape ", shape_str(shape), " expects ",
                        numel(shape), " values, got ", data.size()));
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape) {
    std::vector<double> d(numel(shape), 0.0);
    return from(std::move(shape), std::move(d));
  }

  static Tensor full(Shape shape, double v) {
    std::vector<double> d(numel(shape), v);
    return from(std::move(shape), std::move(d));
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    std::vector<double> d(numel(shape));
    for (auto& x : d) x = stddev * normal01(rng);
    return from(std::move(shape), std::move(d));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::size_t rows() const {
    require(rank() == 2, "rows(): tensor is not 2-d");
    return node_->shape[0];
  }
  std::size_t cols() const {
    require(rank() == 2, "cols(): tensor is not 2-d");
    return node_->shape[1];
  }

  std::span<const double> data() const { return node_->value; }
  // Mutable access for leaves (optimizer updates, test perturbations).
  std::span<double> mutable_data() { return node_->value; }

  double value_at(std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const {
    return node_->value[r * cols() + c];
  }
  double scalar_value() const {
    require(size() == 1, "scalar_value(): tensor is not scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }

  Tensor& set_requires_grad(bool v) {
    require(node_->parents.empty(),
            "set_requires_grad: only leaf tensors can be toggled");
    node_->requires_grad = v;
    return *this;
  }

  // Gradient as stored; empty span when no gradient ever reached this node.
  std::span<const double> grad_span() const { return node_->grad; }

  // Gradient with absent grads read as zeros (matches the contract that an
  // unused parameter has an all-zero gradient).
  std::vector<double> grad() const {
    if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
    return node_->grad;
  }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;

  friend Tensor make_op_node(Shape shape, std::vector<double> value,
                             std::vector<Tensor> inputs);
};

// Builds a result node, wiring parents and requires_grad. The caller installs
// the backprop closure afterwards when any input needs gradients.
inline Tensor make_op_node(Shape shape, std::vector<double> value,
                           std::vector<Tensor> inputs) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.node()->requires_grad) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->parents.reserve(inputs.size());
    for (const auto& in : inputs) n->parents.push_back(in.node());
  }
  return Tensor(std::move(n));
}

namespace detail {

// C[m x n] (+)= opA · opB with opA = A or A^T, opB = B or B^T.
// A is stored [m x k] when !ta, [k x m] when ta; B is stored [k x n] when
// !tb, [n x k] when tb. Loop orders keep the innermost stride unit-length
// wherever possible so -O3 vectorizes them.
inline void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
                 const double* A, const double* B, double* C,
                 bool accumulate) {
  if (!accumulate) std::fill(C, C + m * n, 0.0);
  if (!ta && !tb) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = A + i * k;
      double* ci = C + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double a = ai[p];
        if (a == 0.0) continue;
        const double* bp = B + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += a * bp[j];
      }
    }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = A + i * k;
      double* ci = C + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = B + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
        ci[j] += s;
      }
    }
  } else if (ta && !tb) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* ap = A + p * m;
      const double* bp = B + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double a = ap[i];
        if (a == 0.0) continue;
        double* ci = C + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += a * bp[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = C + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = B + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += A[p * m + i] * bj[p];
        ci[j] += s;
      }
    }
  }
}

inline void axpy(std::span<const double> src, double* dst) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

// Splits a shape at `axis` into (outer, extent, inner) for strided walks.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul

// c = opA(a) · opB(b). The transpose flags exist so attention scores and the
// matmul gradients reuse one kernel without materializing transposed copies.
inline Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
                     bool trans_b = false) {
  require(a.rank() == 2 && b.rank() == 2,
          detail::msg("matmul: expects 2-d operands, got ", shape_str(a.shape()),
                      " and ", shape_str(b.shape())));
  const std::size_t m = trans_a ? a.shape()[1] : a.shape()[0];
  const std::size_t ka = trans_a ? a.shape()[0] : a.shape()[1];
  const std::size_t kb = trans_b ? b.shape()[1] : b.shape()[0];
  const std::size_t n = trans_b ? b.shape()[0] : b.shape()[1];
  require(ka == kb, detail::msg("matmul: inner dimensions differ: ",
                                shape_str(a.shape()), (trans_a ? "^T" : ""),
                                " x ", shape_str(b.shape()),
                                (trans_b ? "^T" : "")));
  std::vector<double> out(m * n);
  detail::gemm(trans_a, trans_b, m, n, ka, a.data().data(), b.data().data(),
               out.data(), false);
  Tensor c = make_op_node({m, n}, std::move(out), {a, b});
  if (c.requires_grad()) {
    auto na = a.node().get();
    auto nb = b.node().get();
    auto nc = c.node().get();
    const std::size_t k = ka;
    c.node()->backprop = [na, nb, nc, m, n, k, trans_a, trans_b] {
      const double* dc = nc->grad.data();
      if (na->requires_grad) {
        double* da = na->grad_buf();
        if (!trans_a && !trans_b)
          detail::gemm(false, true, m, k, n, dc, nb->value.data(), da, true);
        else if (!trans_a && trans_b)
          detail::gemm(false, false, m, k, n, dc, nb->value.data(), da, true);
        else if (trans_a && !trans_b)
          detail::gemm(false, true, k, m, n, nb->value.data(), dc, da, true);
        else
          detail::gemm(true, true, k, m, n, nb->value.data(), dc, da, true);
      }
      if (nb->requires_grad) {
        double* db = nb->grad_buf();
        if (!trans_a && !trans_b)
          detail::gemm(true, false, k, n, m, na->value.data(), dc, db, true);
        else if (!trans_a && trans_b)
          detail::gemm(true, false, n, k, m, dc, na->value.data(), db, true);
        else if (trans_a && !trans_b)
          detail::gemm(false, false, k, n, m, na->value.data(), dc, db, true);
        else
          detail::gemm(true, true, n, k, m, dc, na->value.data(), db, true);
      }
    };
  }
  return c;
}

// ---------------------------------------------------------------------------
// elementwise and broadcast arithmetic

// a + b. Supports equal shapes, plus the bias broadcast [R x C] + [C] (or
// [1 x C]) that linear layers need.
inline Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool bias = !same && a.rank() == 2 &&
                    ((b.rank() == 1 && b.shape()[0] == a.shape()[1]) ||
                     (b.rank() == 2 && b.shape()[0] == 1 &&
                      b.shape()[1] == a.shape()[1]));
  require(same || bias, detail::msg("add: incompatible shapes ",
                                    shape_str(a.shape()), " and ",
                                    shape_str(b.shape())));
  std::vector<double> out(a.data().begin(), a.data().end());
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value_at(i);
  } else {
    const std::size_t c = a.shape()[1];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value_at(i % c);
  }
  Tensor y = make_op_node(a.shape(), std::move(out), {a, b});
  if (y.requires_grad()) {
    auto na = a.node().get();
    auto nb = b.node().get();
    auto ny = y.node().get();
    y.node()->backprop = [na, nb, ny, same] {
      if (na->requires_grad) detail::axpy(ny->grad, na->grad_buf());
      if (nb->requires_grad) {
        double* db = nb->grad_buf();
        if (same) {
          detail::axpy(ny->grad, db);
        } else {
          const std::size_t c = nb->value.size();
          for (std::size_t i = 0; i < ny->grad.size(); ++i)
            db[i % c] += ny->grad[i];
        }
      }
    };
  }
  return y;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          detail::msg("sub: incompatible shapes ", shape_str(a.shape()),
                      " and ", shape_str(b.shape())));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value_at(i) - b.value_at(i);
  Tensor y = make_op_node(a.shape(), std::move(out), {a, b});
  if (y.requires_grad()) {
    auto na = a.node().get();
    auto nb = b.node().get();
    auto ny = y.node().get();
    y.node()->backprop = [na, nb, ny] {
      if (na->requires_grad) detail::axpy(ny->grad, na->grad_buf());
      if (nb->requires_grad) {
        double* db = nb->grad_buf();
        for (std::size_t i = 0; i < ny->grad.size(); ++i) db[i] -= ny->grad[i];
      }
    };
  }
  return y;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          detail::msg("mul: incompatible shapes ", shape_str(a.shape()),
                      " and ", shape_str(b.shape())));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value_at(i) * b.value_at(i);
  Tensor y = make_op_node(a.shape(), std::move(out), {a, b});
  if (y.requires_grad()) {
    auto na = a.node().get();
    auto nb = b.node().get();
    auto ny = y.node().get();
    y.node()->backprop = [na, nb, ny] {
      if (na->requires_grad) {
        double* da = na->grad_buf();
        for (std::size_t i = 0; i < ny->grad.size(); ++i)
          da[i] += ny->grad[i] * nb->value[i];
      }
      if (nb->requires_grad) {
        double* db = nb->grad_buf();
        for (std::size_t i = 0; i < ny->grad.size(); ++i)
          db[i] += ny->grad[i] * na->value[i];
      }
    };
  }
  return y;
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * a.value_at(i);
  Tensor y = make_op_node(a.shape(), std::move(out), {a});
  if (y.requires_grad()) {
    auto na = a.node().get();
    auto ny = y.node().get();
    y.node()->backprop = [na, ny, s] {
      double* da = na->grad_buf();
      for (std::size_t i = 0; i < ny->grad.size(); ++i)
        da[i] += s * ny->grad[i];
    };
  }
  return y;
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::max(0.0, x.value_at(i));
  Tensor y = make_op_node(x.shape(), std::move(out), {x});
  if (y.requires_grad()) {
    auto nx = x.node().get();
    auto ny = y.node().get();
    y.node()->backprop = [nx, ny] {
      double* dx = nx->grad_buf();
      for (std::size_t i = 0; i < ny->grad.size(); ++i)
        if (nx->value[i] > 0.0) dx[i] += ny->grad[i];
    };
  }
  return y;
}

inline Tensor sum(const Tensor& x) {
  double s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  Tensor y = make_op_node({1}, {s}, {x});
  if (y.requires_grad()) {
    auto nx = x.node().get();
    auto ny = y.node().get();
    y.node()->backprop = [nx, ny] {
      double* dx = nx->grad_buf();
      const double g = ny->grad[0];
      for (std::size_t i = 0; i < nx->value.size(); ++i) dx[i] += g;
    };
  }
  return y;
}

inline Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// softmax

// Numerically stable softmax along `axis`; slices along that axis sum to 1.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  require(axis < x.rank(), detail::msg("softmax: axis ", axis,
                                       " invalid for shape ",
                                       shape_str(x.shape())));
  const auto sp = detail::split_axis(x.shape(), axis);
  std::vector<double> out(x.size());
  const auto& v = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.extent * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < sp.extent; ++t)
        mx = std::max(mx, v[base + t * sp.inner]);
      double z = 0.0;
      for (std::size_t t = 0; t < sp.extent; ++t) {
        const double e = std::exp(v[base + t * sp.inner] - mx);
        out[base + t * sp.inner] = e;
        z += e;
      }
      for (std::size_t t = 0; t < sp.extent; ++t)
        out[base + t * sp.inner] /= z;
    }
  }
  Tensor y = make_op_node(x.shape(), std::move(out), {x});
  if (y.requires_grad()) {
    auto nx = x.node().get();
    auto ny = y.node().get();
    y.node()->backprop = [nx, ny, sp] {
      double* dx = nx->grad_buf();
      const auto& yv = ny->value;
      const auto& gy = ny->grad;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
          const std::size_t base = o * sp.extent * sp.inner + in;
          double dot = 0.0;
          for (std::size_t t = 0; t < sp.extent; ++t) {
            const std::size_t ix = base + t * sp.inner;
            dot += gy[ix] * yv[ix];
          }
          for (std::size_t t = 0; t < sp.extent; ++t) {
            const std::size_t ix = base + t * sp.inner;
            dx[ix] += yv[ix] * (gy[ix] - dot);
          }
        }
      }
    };
  }
  return y;
}

// Row softmax restricted to positions where mask != 0. Masked entries are
// exactly zero in the output; a row whose mask is all zero yields an all-zero
// row (callers treat that as "no neighbors, no attention contribution").
inline Tensor masked_softmax_rows(const Tensor& x, const Tensor& mask) {
  require(x.rank() == 2, "masked_softmax_rows: expects a 2-d tensor");
  require(mask.shape() == x.shape(),
          detail::msg("masked_softmax_rows: mask shape ",
                      shape_str(mask.shape()), " != ", shape_str(x.shape())));
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      if (mask.value_at(i * c + j) != 0.0) {
        mx = std::max(mx, x.value_at(i * c + j));
        any = true;
      }
    }
    if (!any) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (mask.value_at(i * c + j) != 0.0) {
        const double e = std::exp(x.value_at(i * c + j) - mx);
        out[i * c + j] = e;
        z += e;
      }
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  Tensor y = make_op_node(x.shape(), std::move(out), {x, mask});
  if (y.requires_grad()) {
    auto nx = x.node().get();
    auto ny = y.node().get();
    y.node()->backprop = [nx, ny, r, c] {
      if (!nx->requires_grad) return;
      double* dx = nx->grad_buf();
      for (std::size_t i = 0; i < r; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j)
          dot += ny->grad[i * c + j] * ny->value[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          const std::size_t ix = i * c + j;
          dx[ix] += ny->value[ix] * (ny->grad[ix] - dot);
        }
      }
    };
  }
  return y;
}

// ---------------------------------------------------------------------------
// layer norm

// Normalizes over the trailing dimension, then applies the gamma/beta affine.
// The pre-affine rows have mean 0 and (eps-regularized) unit variance.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps = 1e-5) {
  require(x.rank() >= 1, "layer_norm: rank must be >= 1");
  const std::size_t d = x.shape().back();
  require(gamma.rank() == 1 && gamma.shape()[0] == d,
          detail::msg("layer_norm: gamma shape ", shape_str(gamma.shape()),
                      " does not match feature width ", d));
  require(beta.rank() == 1 && beta.shape()[0] == d,
          detail::msg("layer_norm: beta shape ", shape_str(beta.shape()),
                      " does not match feature width ", d));
  require(eps > 0.0, "layer_norm: eps must be positive");
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = x.data().data() + i * d;
    double m = 0.0;
    for (std::size_t j = 0; j < d; ++j) m += xi[j];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double t = xi[j] - m;
      var += t * t;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (xi[j] - m) * is;
      (*xhat)[i * d + j] = xh;
      out[i * d + j] = gamma.value_at(j) * xh + beta.value_at(j);
    }
  }
  Tensor y = make_op_node(x.shape(), std::move(out), {x, gamma, beta});
  if (y.requires_grad()) {
    auto nx = x.node().get();
    auto ng = gamma.node().get();
    auto nb = beta.node().get();
    auto ny = y.node().get();
    y.node()->backprop = [nx, ng, nb, ny, xhat, inv_std, rows, d] {
      const auto& gy = ny->grad;
      if (ng->requires_grad) {
        double* dg = ng->grad_buf();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < d; ++j)
            dg[j] += gy[i * d + j] * (*xhat)[i * d + j];
      }
      if (nb->requires_grad) {
        double* db = nb->grad_buf();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < d; ++j) db[j] += gy[i * d + j];
      }
      if (nx->requires_grad) {
        double* dx = nx->grad_buf();
        for (std::size_t i = 0; i < rows; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = gy[i * d + j] * ng->value[j];
            m1 += dxh;
            m2 += dxh * (*xhat)[i * d + j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          const double is = (*inv_std)[i];
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = gy[i * d + j] * ng->value[j];
            dx[i * d + j] += is * (dxh - m1 - (*xhat)[i * d + j] * m2);
          }
        }
      }
    };
  }
  return y;
}

// ---------------------------------------------------------------------------
// concat / slice

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no parts given");
  const auto& s0 = parts[0].shape();
  require(axis < s0.size(), detail::msg("concat: axis ", axis,
                                        " invalid for shape ", shape_str(s0)));
  Shape out_shape = s0;
  std::size_t total = s0[axis];
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const auto& sp = parts[p].shape();
    bool ok = sp.size() == s0.size();
    if (ok)
      for (std::size_t i = 0; i < sp.size(); ++i)
        if (i != axis && sp[i] != s0[i]) ok = false;
    require(ok, detail::msg("concat: shape ", shape_str(sp),
                            " incompatible with ", shape_str(s0), " on axis ",
                            axis));
    total += sp[axis];
  }
  out_shape[axis] = total;
  const auto osp = detail::split_axis(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t ext = p.shape()[axis];
    for (std::size_t o = 0; o < osp.outer; ++o) {
      const double* src = p.data().data() + o * ext * osp.inner;
      double* dst = out.data() + (o * osp.extent + off) * osp.inner;
      std::copy(src, src + ext * osp.inner, dst);
    }
    off += ext;
  }
  Tensor y = make_op_node(std::move(out_shape), std::move(out), parts);
  if (y.requires_grad()) {
    std::vector<TensorNode*> srcs;
    std::vector<std::size_t> exts;
    for (const auto& p : parts) {
      srcs.push_back(p.node().get());
      exts.push_back(p.shape()[axis]);
    }
    auto ny = y.node().get();
    y.node()->backprop = [srcs, exts, ny, osp] {
      std::size_t off = 0;
      for (std::size_t pi = 0; pi < srcs.size(); ++pi) {
        const std::size_t ext = exts[pi];
        if (srcs[pi]->requires_grad) {
          double* dst = srcs[pi]->grad_buf();
          for (std::size_t o = 0; o < osp.outer; ++o) {
            const double* g = ny->grad.data() + (o * osp.extent + off) * osp.inner;
            double* d = dst + o * ext * osp.inner;
            for (std::size_t i = 0; i < ext * osp.inner; ++i) d[i] += g[i];
          }
        }
        off += ext;
      }
    };
  }
  return y;
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
                    std::size_t len) {
  require(axis < x.rank(), detail::msg("slice: axis ", axis,
                                       " invalid for shape ",
                                       shape_str(x.shape())));
  require(start + len <= x.shape()[axis],
          detail::msg("slice: range [", start, ", ", start + len,
                      ") out of bounds for shape ", shape_str(x.shape()),
                      " on axis ", axis));
  const auto sp = detail::split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<double> out(numel(out_shape));
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const double* src = x.data().data() + (o * sp.extent + start) * sp.inner;
    double* dst = out.data() + o * len * sp.inner;
    std::copy(src, src + len * sp.inner, dst);
  }
  Tensor y = make_op_node(std::move(out_shape), std::move(out), {x});
  if (y.requires_grad()) {
    auto nx = x.node().get();
    auto ny = y.node().get();
    y.node()->backprop = [nx, ny, sp, start, len] {
      double* dx = nx->grad_buf();
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const double* g = ny->grad.data() + o * len * sp.inner;
        double* d = dx + (o * sp.extent + start) * sp.inner;
        for (std::size_t i = 0; i < len * sp.inner; ++i) d[i] += g[i];
      }
    };
  }
  return y;
}

// ---------------------------------------------------------------------------
// dropout / embedding / losses

// Inverted dropout: at train time survivors are scaled by 1/(1-rate) so eval
// needs no rescaling; outside training this is the identity.
inline Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0,
          detail::msg("dropout: rate ", rate, " outside [0, 1)"));
  if (!training || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  const double inv = 1.0 / keep;
  auto factors = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double f = uniform01(rng) < keep ? inv : 0.0;
    (*factors)[i] = f;
    out[i] = f * x.value_at(i);
  }
  Tensor y = make_op_node(x.shape(), std::move(out), {x});
  if (y.requires_grad()) {
    auto nx = x.node().get();
    auto ny = y.node().get();
    y.node()->backprop = [nx, ny, factors] {
      double* dx = nx->grad_buf();
      for (std::size_t i = 0; i < ny->grad.size(); ++i)
        dx[i] += (*factors)[i] * ny->grad[i];
    };
  }
  return y;
}

inline Tensor embedding_lookup(const Tensor& table,
                               const std::vector<int>& ids) {
  require(table.rank() == 2, "embedding_lookup: table must be 2-d");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  for (std::size_t i = 0; i < ids.size(); ++i)
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < v,
            detail::msg("embedding_lookup: id ", ids[i], " at position ", i,
                        " out of range [0, ", v, ")"));
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* row = table.data().data() + static_cast<std::size_t>(ids[i]) * d;
    std::copy(row, row + d, out.data() + i * d);
  }
  Tensor y = make_op_node({ids.size(), d}, std::move(out), {table});
  if (y.requires_grad()) {
    auto nt = table.node().get();
    auto ny = y.node().get();
    y.node()->backprop = [nt, ny, ids, d] {
      double* dt = nt->grad_buf();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* g = ny->grad.data() + i * d;
        double* row = dt + static_cast<std::size_t>(ids[i]) * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += g[j];
      }
    };
  }
  return y;
}

// Mean over rows of -log softmax(logits)[label], computed via log-sum-exp so
// large logits cannot overflow.
inline Tensor cross_entropy(const Tensor& logits,
                            const std::vector<int>& labels) {
  require(logits.rank() == 2, "cross_entropy: logits must be 2-d");
  const std::size_t n = logits.shape()[0], m = logits.shape()[1];
  require(labels.size() == n,
          detail::msg("cross_entropy: ", labels.size(), " labels for ", n,
                      " rows"));
  for (std::size_t i = 0; i < n; ++i)
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < m,
            detail::msg("cross_entropy: label ", labels[i], " at row ", i,
                        " out of range [0, ", m, ")"));
  auto probs = std::make_shared<std::vector<double>>(n * m);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = logits.data().data() + i * m;
    double mx = xi[0];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(xi[j] - mx);
    const double lse = std::log(z) + mx;
    loss += lse - xi[labels[i]];
    for (std::size_t j = 0; j < m; ++j)
      (*probs)[i * m + j] = std::exp(xi[j] - lse);
  }
  loss /= static_cast<double>(n);
  Tensor y = make_op_node({1}, {loss}, {logits});
  if (y.requires_grad()) {
    auto nx = logits.node().get();
    auto ny = y.node().get();
    y.node()->backprop = [nx, ny, probs, labels, n, m] {
      double* dx = nx->grad_buf();
      const double g = ny->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j)
          dx[i * m + j] += g * (*probs)[i * m + j];
        dx[i * m + static_cast<std::size_t>(labels[i])] -= g;
      }
    };
  }
  return y;
}

// ---------------------------------------------------------------------------
// backward

// Reverse-mode sweep from a scalar loss. Gradients ACCUMULATE into leaves,
// so parameters need zero_grad between steps; interior nodes are per-sweep
// scratch and are reset here, which keeps repeated sweeps over one tape
// additive at the leaves only.
inline void backward(const Tensor& loss) {
  require(loss.size() == 1,
          detail::msg("backward: loss must be scalar, got shape ",
                      shape_str(loss.shape())));
  // Topological order, inputs before outputs.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (TensorNode* n : order)
    if (n->backprop && !n->grad.empty())
      std::fill(n->grad.begin(), n->grad.end(), 0.0);
  loss.node()->grad_buf()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop();
  }
}

}  // namespace mmerc
