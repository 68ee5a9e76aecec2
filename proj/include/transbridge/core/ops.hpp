// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable primitives recorded on an ad::Graph. Every op computes its
// forward value eagerly and registers a closure that scatters the output
// gradient into its inputs' accumulation buffers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "transbridge/core/dense_array.hpp"
#include "transbridge/core/graph.hpp"

namespace tb::ad {

namespace detail {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

inline AxisSplit split_axis(const Dims& dims, std::size_t axis) {
  if (axis >= dims.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for dims " + dims_to_string(dims));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= dims[i];
  s.n = dims[axis];
  for (std::size_t i = axis + 1; i < dims.size(); ++i) s.inner *= dims[i];
  return s;
}

inline void require_same(const DenseArray& a, const DenseArray& b, const char* op) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(op) + ": dims mismatch " + dims_to_string(a.dims()) + " vs " +
                     dims_to_string(b.dims()));
  }
}

inline void check_finite(const DenseArray& a, const char* op) {
  if (!a.all_finite()) throw std::domain_error(std::string(op) + ": non-finite result");
}

// C[m,n] += A[m,k] * B[k,n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m,k] += dC[m,n] * B[k,n]^T
inline void gemm_nt(const double* dc, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* drow = dc + i * n;
    double* arow = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += drow[j] * brow[j];
      arow[p] += acc;
    }
  }
}

// dB[k,n] += A[m,k]^T * dC[m,n]
inline void gemm_tn(const double* a, const double* dc, double* db, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* drow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* brow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) brow[j] += av * drow[j];
    }
  }
}

inline Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw std::logic_error("Var is not attached to a graph");
  return *a.graph;
}

inline Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw std::logic_error("Vars belong to different graphs");
  return graph_of(a);
}

}  // namespace detail

/// [m,k] x [k,n] -> [m,n]
inline Var matmul(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  const DenseArray& av = g.value(a);
  const DenseArray& bv = g.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: incompatible dims " + dims_to_string(av.dims()) + " x " +
                     dims_to_string(bv.dims()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  DenseArray out({m, n});
  detail::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return g.record("matmul", {a.id, b.id}, std::move(out), [m, k, n](Graph& g, std::size_t self) {
    const auto ia = g.inputs(self)[0], ib = g.inputs(self)[1];
    const double* dc = g.grad_buffer(self).data().data();
    if (g.needs_grad(ia)) detail::gemm_nt(dc, g.value(ib).data().data(), g.grad_buffer(ia).data().data(), m, k, n);
    if (g.needs_grad(ib)) detail::gemm_tn(g.value(ia).data().data(), dc, g.grad_buffer(ib).data().data(), m, k, n);
  });
}

/// x[..., n] + b[n]
inline Var add_bias(Var x, Var b) {
  Graph& g = detail::graph_of(x, b);
  const DenseArray& xv = g.value(x);
  const DenseArray& bv = g.value(b);
  if (bv.rank() != 1 || xv.rank() == 0 || xv.dims().back() != bv.dim(0)) {
    throw ShapeError("add_bias: dims " + dims_to_string(xv.dims()) + " + " + dims_to_string(bv.dims()));
  }
  const std::size_t n = bv.dim(0);
  DenseArray out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  return g.record("add_bias", {x.id, b.id}, std::move(out), [n](Graph& g, std::size_t self) {
    const auto ix = g.inputs(self)[0], ib = g.inputs(self)[1];
    const DenseArray& d = g.grad_buffer(self);
    if (g.needs_grad(ix)) {
      auto& dx = g.grad_buffer(ix);
      for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i];
    }
    if (g.needs_grad(ib)) {
      auto& db = g.grad_buffer(ib);
      for (std::size_t i = 0; i < d.size(); ++i) db[i % n] += d[i];
    }
  });
}

inline Var add(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  detail::require_same(g.value(a), g.value(b), "add");
  DenseArray out = g.value(a);
  const DenseArray& bv = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.record("add", {a.id, b.id}, std::move(out), [](Graph& g, std::size_t self) {
    const DenseArray& d = g.grad_buffer(self);
    for (std::size_t in : g.inputs(self)) {
      if (!g.needs_grad(in)) continue;
      auto& dx = g.grad_buffer(in);
      for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  detail::require_same(g.value(a), g.value(b), "mul");
  DenseArray out = g.value(a);
  const DenseArray& bv = g.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.record("mul", {a.id, b.id}, std::move(out), [](Graph& g, std::size_t self) {
    const auto ia = g.inputs(self)[0], ib = g.inputs(self)[1];
    const DenseArray& d = g.grad_buffer(self);
    if (g.needs_grad(ia)) {
      auto& da = g.grad_buffer(ia);
      const DenseArray& bv = g.value(ib);
      for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i] * bv[i];
    }
    if (g.needs_grad(ib)) {
      auto& db = g.grad_buffer(ib);
      const DenseArray& av = g.value(ia);
      for (std::size_t i = 0; i < d.size(); ++i) db[i] += d[i] * av[i];
    }
  });
}

inline Var scale(Var x, double s) {
  Graph& g = detail::graph_of(x);
  DenseArray out = g.value(x);
  for (double& v : out.storage()) v *= s;
  return g.record("scale", {x.id}, std::move(out), [s](Graph& g, std::size_t self) {
    const auto ix = g.inputs(self)[0];
    const DenseArray& d = g.grad_buffer(self);
    auto& dx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < d.size(); ++i) dx[i] += s * d[i];
  });
}

inline Var relu(Var x) {
  Graph& g = detail::graph_of(x);
  DenseArray out = g.value(x);
  for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return g.record("relu", {x.id}, std::move(out), [](Graph& g, std::size_t self) {
    const auto ix = g.inputs(self)[0];
    const DenseArray& d = g.grad_buffer(self);
    const DenseArray& xv = g.value(ix);
    auto& dx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (xv[i] > 0.0) dx[i] += d[i];
    }
  });
}

inline double sigmoid_scalar(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Var sigmoid(Var x) {
  Graph& g = detail::graph_of(x);
  DenseArray out = g.value(x);
  for (double& v : out.storage()) v = sigmoid_scalar(v);
  return g.record("sigmoid", {x.id}, std::move(out), [](Graph& g, std::size_t self) {
    const auto ix = g.inputs(self)[0];
    const DenseArray& d = g.grad_buffer(self);
    const DenseArray& y = g.value(self);
    auto& dx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] * y[i] * (1.0 - y[i]);
  });
}

/// Softmax along `axis` with max subtraction.
inline Var softmax(Var x, std::size_t axis) {
  Graph& g = detail::graph_of(x);
  const DenseArray& xv = g.value(x);
  const auto s = detail::split_axis(xv.dims(), axis);
  DenseArray out(xv.dims());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = xv[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(xv[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= z;
    }
  }
  return g.record("softmax", {x.id}, std::move(out), [s](Graph& g, std::size_t self) {
    const auto ix = g.inputs(self)[0];
    const DenseArray& d = g.grad_buffer(self);
    const DenseArray& y = g.value(self);
    auto& dx = g.grad_buffer(ix);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) dot += d[base + j * s.inner] * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t k = base + j * s.inner;
          dx[k] += y[k] * (d[k] - dot);
        }
      }
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes every slice along `axis` to zero mean / unit variance, then
/// applies gain[n] and bias[n] along that axis.
inline Var layer_norm(Var x, std::size_t axis, Var gain, Var bias) {
  Graph& g = detail::graph_of(x, gain);
  detail::graph_of(x, bias);
  const DenseArray& xv = g.value(x);
  const auto s = detail::split_axis(xv.dims(), axis);
  const DenseArray& gv = g.value(gain);
  const DenseArray& bv = g.value(bias);
  if (gv.dims() != Dims{s.n} || bv.dims() != Dims{s.n}) {
    throw ShapeError("layer_norm: gain/bias dims " + dims_to_string(gv.dims()) + "/" +
                     dims_to_string(bv.dims()) + " do not match axis length " + std::to_string(s.n));
  }
  DenseArray xhat(xv.dims());
  std::vector<double> inv_std(s.outer * s.inner);
  DenseArray out(xv.dims());
  const double n = static_cast<double>(s.n);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mean = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) mean += xv[base + j * s.inner];
      mean /= n;
      double var = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double c = xv[base + j * s.inner] - mean;
        var += c * c;
      }
      var /= n;
      const double is = 1.0 / std::sqrt(var + kLayerNormEps);
      inv_std[o * s.inner + in] = is;
      for (std::size_t j = 0; j < s.n; ++j) {
        const std::size_t k = base + j * s.inner;
        xhat[k] = (xv[k] - mean) * is;
        out[k] = gv[j] * xhat[k] + bv[j];
      }
    }
  }
  return g.record("layer_norm", {x.id, gain.id, bias.id}, std::move(out),
                  [s, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
                    const auto ix = g.inputs(self)[0], ig = g.inputs(self)[1], ib = g.inputs(self)[2];
                    const DenseArray& d = g.grad_buffer(self);
                    const DenseArray& gv = g.value(ig);
                    if (g.needs_grad(ig)) {
                      auto& dg = g.grad_buffer(ig);
                      for (std::size_t i = 0; i < d.size(); ++i) dg[(i / s.inner) % s.n] += d[i] * xhat[i];
                    }
                    if (g.needs_grad(ib)) {
                      auto& db = g.grad_buffer(ib);
                      for (std::size_t i = 0; i < d.size(); ++i) db[(i / s.inner) % s.n] += d[i];
                    }
                    if (!g.needs_grad(ix)) return;
                    auto& dx = g.grad_buffer(ix);
                    for (std::size_t o = 0; o < s.outer; ++o) {
                      for (std::size_t in = 0; in < s.inner; ++in) {
                        const std::size_t base = o * s.n * s.inner + in;
                        double mean_d = 0.0, mean_dx = 0.0;
                        for (std::size_t j = 0; j < s.n; ++j) {
                          const std::size_t k = base + j * s.inner;
                          const double dxh = d[k] * gv[j];
                          mean_d += dxh;
                          mean_dx += dxh * xhat[k];
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        const double is = inv_std[o * s.inner + in];
                        for (std::size_t j = 0; j < s.n; ++j) {
                          const std::size_t k = base + j * s.inner;
                          dx[k] += is * (d[k] * gv[j] - mean_d - xhat[k] * mean_dx);
                        }
                      }
                    }
                  });
}

inline Var reshape(Var x, Dims dims) {
  Graph& g = detail::graph_of(x);
  DenseArray out = g.value(x).reshaped(std::move(dims));
  return g.record("reshape", {x.id}, std::move(out), [](Graph& g, std::size_t self) {
    const auto ix = g.inputs(self)[0];
    const DenseArray& d = g.grad_buffer(self);
    auto& dx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i];
  });
}

/// Value copy cut off from the gradient path.
inline Var detach(Var x) {
  Graph& g = detail::graph_of(x);
  return g.constant(g.value(x));
}

/// [R,A] ++ [R,B] -> [R,A+B]
inline Var concat_cols(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  const DenseArray& av = g.value(a);
  const DenseArray& bv = g.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0)) {
    throw ShapeError("concat_cols: dims " + dims_to_string(av.dims()) + " and " + dims_to_string(bv.dims()));
  }
  const std::size_t rows = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  DenseArray out({rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data().data() + r * ca, ca, out.data().data() + r * (ca + cb));
    std::copy_n(bv.data().data() + r * cb, cb, out.data().data() + r * (ca + cb) + ca);
  }
  return g.record("concat_cols", {a.id, b.id}, std::move(out), [rows, ca, cb](Graph& g, std::size_t self) {
    const auto ia = g.inputs(self)[0], ib = g.inputs(self)[1];
    const DenseArray& d = g.grad_buffer(self);
    if (g.needs_grad(ia)) {
      auto& da = g.grad_buffer(ia);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < ca; ++c) da[r * ca + c] += d[r * (ca + cb) + c];
    }
    if (g.needs_grad(ib)) {
      auto& db = g.grad_buffer(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cb; ++c) db[r * cb + c] += d[r * (ca + cb) + ca + c];
    }
  });
}

/// Row gather from [R,C]; index -1 yields a zero row.
inline Var gather_rows(Var x, std::vector<long> index) {
  Graph& g = detail::graph_of(x);
  const DenseArray& xv = g.value(x);
  if (xv.rank() != 2) throw ShapeError("gather_rows: expected rank 2, got " + dims_to_string(xv.dims()));
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  DenseArray out({index.size(), cols});
  for (std::size_t r = 0; r < index.size(); ++r) {
    const long src = index[r];
    if (src < 0) continue;
    if (static_cast<std::size_t>(src) >= rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(src) + " >= " + std::to_string(rows));
    }
    std::copy_n(xv.data().data() + src * cols, cols, out.data().data() + r * cols);
  }
  return g.record("gather_rows", {x.id}, std::move(out),
                  [cols, index = std::move(index)](Graph& g, std::size_t self) {
                    const auto ix = g.inputs(self)[0];
                    const DenseArray& d = g.grad_buffer(self);
                    auto& dx = g.grad_buffer(ix);
                    for (std::size_t r = 0; r < index.size(); ++r) {
                      if (index[r] < 0) continue;
                      const std::size_t dst = static_cast<std::size_t>(index[r]) * cols;
                      for (std::size_t c = 0; c < cols; ++c) dx[dst + c] += d[r * cols + c];
                    }
                  });
}

inline Var sum(Var x) {
  Graph& g = detail::graph_of(x);
  double acc = 0.0;
  for (double v : g.value(x).data()) acc += v;
  return g.record("sum", {x.id}, DenseArray::scalar(acc), [](Graph& g, std::size_t self) {
    const auto ix = g.inputs(self)[0];
    const double d = g.grad_buffer(self)[0];
    auto& dx = g.grad_buffer(ix);
    for (double& v : dx.storage()) v += d;
  });
}

inline Var mean(Var x) {
  Graph& g = detail::graph_of(x);
  const std::size_t n = g.value(x).size();
  if (n == 0) return g.constant(DenseArray::scalar(0.0));
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

inline constexpr double kSmoothL1Delta = 1.0;

/// Mean over elements of 0.5 x^2 / delta (|x| < delta) or |x| - 0.5 delta.
inline Var smooth_l1(Var pred, Var target, double delta = kSmoothL1Delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("smooth_l1: delta must be positive");
  Graph& g = detail::graph_of(pred, target);
  const DenseArray& pv = g.value(pred);
  const DenseArray& tv = g.value(target);
  detail::require_same(pv, tv, "smooth_l1");
  const std::size_t n = pv.size();
  if (n == 0) return g.constant(DenseArray::scalar(0.0));
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pv[i] - tv[i];
    const double ax = std::abs(x);
    acc += ax < delta ? 0.5 * x * x / delta : ax - 0.5 * delta;
  }
  return g.record("smooth_l1", {pred.id, target.id}, DenseArray::scalar(acc / static_cast<double>(n)),
                  [delta, n](Graph& g, std::size_t self) {
                    const auto ip = g.inputs(self)[0], it = g.inputs(self)[1];
                    const double d = g.grad_buffer(self)[0] / static_cast<double>(n);
                    const DenseArray& pv = g.value(ip);
                    const DenseArray& tv = g.value(it);
                    for (std::size_t i = 0; i < n; ++i) {
                      const double x = pv[i] - tv[i];
                      const double dl = std::abs(x) < delta ? x / delta : (x > 0.0 ? 1.0 : -1.0);
                      if (g.needs_grad(ip)) g.grad_buffer(ip)[i] += d * dl;
                      if (g.needs_grad(it)) g.grad_buffer(it)[i] -= d * dl;
                    }
                  });
}

/// Mean binary cross-entropy of logits against {0,1} labels.
inline Var bce_with_logits(Var logits, const DenseArray& labels) {
  Graph& g = detail::graph_of(logits);
  const DenseArray& z = g.value(logits);
  if (z.size() != labels.size()) {
    throw ShapeError("bce_with_logits: " + std::to_string(z.size()) + " logits vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = z.size();
  if (n == 0) return g.constant(DenseArray::scalar(0.0));
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += std::max(z[i], 0.0) - z[i] * labels[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  return g.record("bce_with_logits", {logits.id}, DenseArray::scalar(acc / static_cast<double>(n)),
                  [labels, n](Graph& g, std::size_t self) {
                    const auto iz = g.inputs(self)[0];
                    const double d = g.grad_buffer(self)[0] / static_cast<double>(n);
                    const DenseArray& z = g.value(iz);
                    auto& dz = g.grad_buffer(iz);
                    for (std::size_t i = 0; i < n; ++i) dz[i] += d * (sigmoid_scalar(z[i]) - labels[i]);
                  });
}

/// out[p,h,c] = sum_t weights[p,t,h,c] * tokens[p,t,c]
inline Var attention_pool(Var weights, Var tokens) {
  Graph& g = detail::graph_of(weights, tokens);
  const DenseArray& a = g.value(weights);
  const DenseArray& x = g.value(tokens);
  if (a.rank() != 4 || x.rank() != 3 || a.dim(0) != x.dim(0) || a.dim(1) != x.dim(1) || a.dim(3) != x.dim(2)) {
    throw ShapeError("attention_pool: weights " + dims_to_string(a.dims()) + " vs tokens " +
                     dims_to_string(x.dims()));
  }
  const std::size_t P = a.dim(0), T = a.dim(1), H = a.dim(2), C = a.dim(3);
  DenseArray out({P, H, C});
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < H; ++h) {
        const double* arow = a.data().data() + ((p * T + t) * H + h) * C;
        const double* xrow = x.data().data() + (p * T + t) * C;
        double* orow = out.data().data() + (p * H + h) * C;
        for (std::size_t c = 0; c < C; ++c) orow[c] += arow[c] * xrow[c];
      }
  return g.record("attention_pool", {weights.id, tokens.id}, std::move(out),
                  [P, T, H, C](Graph& g, std::size_t self) {
                    const auto ia = g.inputs(self)[0], ix = g.inputs(self)[1];
                    const DenseArray& d = g.grad_buffer(self);
                    const DenseArray& a = g.value(ia);
                    const DenseArray& x = g.value(ix);
                    const bool ga = g.needs_grad(ia), gx = g.needs_grad(ix);
                    double* da = ga ? g.grad_buffer(ia).data().data() : nullptr;
                    double* dx = gx ? g.grad_buffer(ix).data().data() : nullptr;
                    for (std::size_t p = 0; p < P; ++p)
                      for (std::size_t t = 0; t < T; ++t)
                        for (std::size_t h = 0; h < H; ++h) {
                          const std::size_t arow = ((p * T + t) * H + h) * C;
                          const std::size_t xrow = (p * T + t) * C;
                          const std::size_t orow = (p * H + h) * C;
                          for (std::size_t c = 0; c < C; ++c) {
                            if (ga) da[arow + c] += d[orow + c] * x[xrow + c];
                            if (gx) dx[xrow + c] += d[orow + c] * a[arow + c];
                          }
                        }
                  });
}

/// [P,C] (x) [P,D] -> [P,C,D]
inline Var batched_outer(Var q, Var k) {
  Graph& g = detail::graph_of(q, k);
  const DenseArray& qv = g.value(q);
  const DenseArray& kv = g.value(k);
  if (qv.rank() != 2 || kv.rank() != 2 || qv.dim(0) != kv.dim(0)) {
    throw ShapeError("batched_outer: dims " + dims_to_string(qv.dims()) + " and " + dims_to_string(kv.dims()));
  }
  const std::size_t P = qv.dim(0), C = qv.dim(1), D = kv.dim(1);
  DenseArray out({P, C, D});
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t i = 0; i < C; ++i)
      for (std::size_t j = 0; j < D; ++j) out[(p * C + i) * D + j] = qv[p * C + i] * kv[p * D + j];
  return g.record("batched_outer", {q.id, k.id}, std::move(out), [P, C, D](Graph& g, std::size_t self) {
    const auto iq = g.inputs(self)[0], ik = g.inputs(self)[1];
    const DenseArray& d = g.grad_buffer(self);
    const DenseArray& qv = g.value(iq);
    const DenseArray& kv = g.value(ik);
    const bool gq = g.needs_grad(iq), gk = g.needs_grad(ik);
    double* dq = gq ? g.grad_buffer(iq).data().data() : nullptr;
    double* dk = gk ? g.grad_buffer(ik).data().data() : nullptr;
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < D; ++j) {
          const double dv = d[(p * C + i) * D + j];
          if (gq) dq[p * C + i] += dv * kv[p * D + j];
          if (gk) dk[p * D + j] += dv * qv[p * C + i];
        }
  });
}

/// out[p,i] = sum_j m[p,i,j] * v[p,j]
inline Var batched_matvec(Var m, Var v) {
  Graph& g = detail::graph_of(m, v);
  const DenseArray& mv = g.value(m);
  const DenseArray& vv = g.value(v);
  if (mv.rank() != 3 || vv.rank() != 2 || mv.dim(0) != vv.dim(0) || mv.dim(2) != vv.dim(1)) {
    throw ShapeError("batched_matvec: dims " + dims_to_string(mv.dims()) + " and " + dims_to_string(vv.dims()));
  }
  const std::size_t P = mv.dim(0), C = mv.dim(1), D = mv.dim(2);
  DenseArray out({P, C});
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t i = 0; i < C; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < D; ++j) acc += mv[(p * C + i) * D + j] * vv[p * D + j];
      out[p * C + i] = acc;
    }
  return g.record("batched_matvec", {m.id, v.id}, std::move(out), [P, C, D](Graph& g, std::size_t self) {
    const auto im = g.inputs(self)[0], iv = g.inputs(self)[1];
    const DenseArray& d = g.grad_buffer(self);
    const DenseArray& mv = g.value(im);
    const DenseArray& vv = g.value(iv);
    const bool gm = g.needs_grad(im), gv = g.needs_grad(iv);
    double* dm = gm ? g.grad_buffer(im).data().data() : nullptr;
    double* dv = gv ? g.grad_buffer(iv).data().data() : nullptr;
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t i = 0; i < C; ++i) {
        const double di = d[p * C + i];
        for (std::size_t j = 0; j < D; ++j) {
          if (gm) dm[(p * C + i) * D + j] += di * vv[p * D + j];
          if (gv) dv[p * D + j] += di * mv[(p * C + i) * D + j];
        }
      }
  });
}

/// y = x W + b over the trailing axis, using parameters "<name>.w" [in,out] and
/// "<name>.b" [out].
inline Var linear(Var x, const std::string& name) {
  Graph& g = detail::graph_of(x);
  Var w = g.param(name + ".w");
  Var b = g.param(name + ".b");
  const DenseArray& xv = g.value(x);
  const DenseArray& wv = g.value(w);
  if (xv.rank() == 0 || xv.dims().back() != wv.dim(0)) {
    throw ShapeError("linear '" + name + "': input dim " + (xv.rank() ? std::to_string(xv.dims().back()) : "scalar") +
                     " does not match weight input dim " + std::to_string(wv.dim(0)));
  }
  const std::size_t in = wv.dim(0), out = wv.dim(1);
  Dims out_dims = xv.dims();
  out_dims.back() = out;
  Var flat = reshape(x, {xv.size() / in, in});
  Var y = add_bias(matmul(flat, w), b);
  return reshape(y, std::move(out_dims));
}

/// Registers "<name>.w" (Xavier uniform) and "<name>.b" (zeros).
inline void add_linear_params(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                              std::mt19937_64& rng) {
  store.add_xavier(name + ".w", {in, out}, in, out, rng);
  store.add(name + ".b", DenseArray({out}));
}

/// Registers "<name>.gain" (ones) and "<name>.bias" (zeros).
inline void add_norm_params(ParamStore& store, const std::string& name, std::size_t n) {
  store.add(name + ".gain", DenseArray({n}, 1.0));
  store.add(name + ".bias", DenseArray({n}));
}

inline Var layer_norm(Var x, std::size_t axis, const std::string& name) {
  Graph& g = detail::graph_of(x);
  return layer_norm(x, axis, g.param(name + ".gain"), g.param(name + ".bias"));
}

}  // namespace tb::ad
