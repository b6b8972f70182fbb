#pragma once

// Differentiable primitives over Tape-recorded tensors. Each op computes its
// forward value eagerly and registers a closure that accumulates input
// gradients; inputs that do not require gradients are skipped.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "seqdistill/num/kernels.hpp"
#include "seqdistill/num/tape.hpp"

namespace seqdistill::num {

namespace detail {

template <class T>
Tape<T>& same_tape(Var<T> a, Var<T> b) {
  require(a.tape != nullptr && a.tape == b.tape, "operands recorded on different tapes");
  return *a.tape;
}

template <class T>
void require_same_shape(const char* op, Var<T> a, Var<T> b) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

template <class T, class F, class D>
Var<T> unary(const char* op, Var<T> x, F f, D dfdx) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  int ix = x.id;
  return t.record(op, std::move(out), {ix}, [ix, dfdx](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>& y) {
    const Tensor<T>& xv2 = tp.value(ix);
    Tensor<T>& gx = tp.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv2[i], y[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  detail::require_same_shape("add", a, b);
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  int ia = a.id, ib = b.id;
  return t.record("add", std::move(out), {ia, ib}, [ia, ib](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    if (tp.needs_grad(ia)) kernels::axpy(tp.grad(ia).data.data(), g.data.data(), T(1), g.size());
    if (tp.needs_grad(ib)) kernels::axpy(tp.grad(ib).data.data(), g.data.data(), T(1), g.size());
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  detail::require_same_shape("sub", a, b);
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  int ia = a.id, ib = b.id;
  return t.record("sub", std::move(out), {ia, ib}, [ia, ib](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    if (tp.needs_grad(ia)) kernels::axpy(tp.grad(ia).data.data(), g.data.data(), T(1), g.size());
    if (tp.needs_grad(ib)) kernels::axpy(tp.grad(ib).data.data(), g.data.data(), T(-1), g.size());
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  detail::require_same_shape("mul", a, b);
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  int ia = a.id, ib = b.id;
  return t.record("mul", std::move(out), {ia, ib}, [ia, ib](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    const Tensor<T>& av = tp.value(ia);
    const Tensor<T>& bv2 = tp.value(ib);
    if (tp.needs_grad(ia)) {
      Tensor<T>& ga = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (tp.needs_grad(ib)) {
      Tensor<T>& gb = tp.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> x, T s) {
  return detail::unary<T>(
      "scale", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

// x[..., n] + b[n]
template <class T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  Tape<T>& t = detail::same_tape(x, b);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& bv = b.value();
  require(bv.size() == xv.cols(), "add_bias: bias length " + std::to_string(bv.size()) + " vs last axis " +
                                      std::to_string(xv.cols()));
  Tensor<T> out = xv;
  const std::size_t n = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) kernels::axpy(out.row(r), bv.data.data(), T(1), n);
  int ix = x.id, ib = b.id;
  return t.record("add_bias", std::move(out), {ix, ib}, [ix, ib, n](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    if (tp.needs_grad(ix)) kernels::axpy(tp.grad(ix).data.data(), g.data.data(), T(1), g.size());
    if (tp.needs_grad(ib)) {
      Tensor<T>& gb = tp.grad(ib);
      for (std::size_t r = 0; r < g.rows(); ++r) kernels::axpy(gb.data.data(), g.row(r), T(1), n);
    }
  });
}

template <class T>
Var<T> relu(Var<T> x) {
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

// Exact (erf-based) GELU.
template <class T>
Var<T> gelu(Var<T> x) {
  return detail::unary<T>(
      "gelu", x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2))); },
      [](T v, T) {
        T cdf = T(0.5) * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2)));
        T pdf = std::exp(T(-0.5) * v * v) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
        return cdf + v * pdf;
      });
}

template <class T>
Var<T> exp(Var<T> x) {
  return detail::unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(Var<T> x) {
  return detail::unary<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

// log(1 + e^x), stable for large |x|.
template <class T>
Var<T> softplus(Var<T> x) {
  return detail::unary<T>(
      "softplus", x, [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T v, T) { return T(1) / (T(1) + std::exp(-v)); });
}

// ----------------------------------------------------------------- reductions

template <class T>
Var<T> sum(Var<T> x) {
  const Tensor<T>& xv = x.value();
  T s = T(0);
  for (T v : xv.data) s += v;
  int ix = x.id;
  return x.tape->record("sum", Tensor<T>::scalar(s), {ix}, [ix](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& gx = tp.grad(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

// ------------------------------------------------------------------- products

// a[..., m, k] @ b. b is either shared [k, n] (or [n, k] with transpose_b) or
// batched [batch, k, n] matching a's leading extent.
template <class T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_b = false) {
  Tape<T>& t = detail::same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require(av.rank() >= 2 && (bv.rank() == 2 || bv.rank() == 3), "matmul: unsupported ranks");
  const std::size_t m = av.dim(-2), k = av.dim(-1);
  const std::size_t batch = av.size() / (m * k);
  const bool shared = bv.rank() == 2;
  const std::size_t bk = transpose_b ? bv.dim(-1) : bv.dim(-2);
  const std::size_t n = transpose_b ? bv.dim(-2) : bv.dim(-1);
  require(bk == k, "matmul: inner extents differ " + shape_str(av.shape) + " @ " + shape_str(bv.shape) +
                       (transpose_b ? "^T" : ""));
  require(shared || (av.rank() == 3 && bv.dim(0) == batch), "matmul: batch extents differ");

  Shape os = av.shape;
  os.back() = n;
  Tensor<T> out(os);
  std::vector<T> bt;
  if (shared) {
    const T* bp = bv.data.data();
    if (transpose_b) {
      bt.resize(k * n);
      kernels::transpose(bv.data.data(), bt.data(), n, k);
      bp = bt.data();
    }
    kernels::gemm(av.data.data(), bp, out.data.data(), batch * m, k, n, false);
  } else {
    if (transpose_b) bt.resize(k * n);
    for (std::size_t s = 0; s < batch; ++s) {
      const T* bp = bv.data.data() + s * k * n;
      if (transpose_b) {
        kernels::transpose(bp, bt.data(), n, k);
        bp = bt.data();
      }
      kernels::gemm(av.data.data() + s * m * k, bp, out.data.data() + s * m * n, m, k, n, false);
    }
  }

  int ia = a.id, ib = b.id;
  return t.record("matmul", std::move(out), {ia, ib},
                  [ia, ib, m, k, n, batch, shared, transpose_b](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
                    const Tensor<T>& av2 = tp.value(ia);
                    const Tensor<T>& bv2 = tp.value(ib);
                    const std::size_t groups = shared ? 1 : batch;
                    const std::size_t rows = shared ? batch * m : m;
                    std::vector<T> tmp;
                    for (std::size_t s = 0; s < groups; ++s) {
                      const T* gp = g.data.data() + s * rows * n;
                      const T* ap = av2.data.data() + s * rows * k;
                      const T* bp = bv2.data.data() + (shared ? 0 : s * k * n);
                      if (tp.needs_grad(ia)) {
                        T* ga = tp.grad(ia).data.data() + s * rows * k;
                        if (transpose_b) {
                          kernels::gemm(gp, bp, ga, rows, n, k, true);  // b stored [n, k]
                        } else {
                          tmp.resize(k * n);
                          kernels::transpose(bp, tmp.data(), k, n);
                          kernels::gemm(gp, tmp.data(), ga, rows, n, k, true);
                        }
                      }
                      if (tp.needs_grad(ib)) {
                        T* gb = tp.grad(ib).data.data() + (shared ? 0 : s * k * n);
                        if (transpose_b) {
                          tmp.resize(rows * n);
                          kernels::transpose(gp, tmp.data(), rows, n);
                          kernels::gemm(tmp.data(), ap, gb, n, rows, k, true);
                        } else {
                          tmp.resize(rows * k);
                          kernels::transpose(ap, tmp.data(), rows, k);
                          kernels::gemm(tmp.data(), gp, gb, k, rows, n, true);
                        }
                      }
                    }
                  });
}

// Row-wise dot product: a[n, d], b[n, d] -> [n].
template <class T>
Var<T> dot_rows(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  detail::require_same_shape("dot_rows", a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const std::size_t n = av.rows(), d = av.cols();
  Tensor<T> out(Shape{n});
  for (std::size_t r = 0; r < n; ++r) out[r] = kernels::dot(av.row(r), bv.row(r), d);
  int ia = a.id, ib = b.id;
  return t.record("dot_rows", std::move(out), {ia, ib}, [ia, ib, n, d](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    const Tensor<T>& av2 = tp.value(ia);
    const Tensor<T>& bv2 = tp.value(ib);
    if (tp.needs_grad(ia)) {
      Tensor<T>& ga = tp.grad(ia);
      for (std::size_t r = 0; r < n; ++r) kernels::axpy(ga.row(r), bv2.row(r), g[r], d);
    }
    if (tp.needs_grad(ib)) {
      Tensor<T>& gb = tp.grad(ib);
      for (std::size_t r = 0; r < n; ++r) kernels::axpy(gb.row(r), av2.row(r), g[r], d);
    }
  });
}

// Pairwise squared L2 distances: a[n, d], b[m, d] -> [n, m].
template <class T>
Var<T> sqdist_rows(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.cols(), "sqdist_rows: expects [n,d] and [m,d]");
  const std::size_t n = av.rows(), m = bv.rows(), d = av.cols();
  Tensor<T> out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      T s = T(0);
      for (std::size_t c = 0; c < d; ++c) {
        T diff = av.at(i, c) - bv.at(j, c);
        s += diff * diff;
      }
      out.at(i, j) = s;
    }
  int ia = a.id, ib = b.id;
  return t.record("sqdist_rows", std::move(out), {ia, ib}, [ia, ib, n, m, d](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    const Tensor<T>& av2 = tp.value(ia);
    const Tensor<T>& bv2 = tp.value(ib);
    Tensor<T>* ga = tp.needs_grad(ia) ? &tp.grad(ia) : nullptr;
    Tensor<T>* gb = tp.needs_grad(ib) ? &tp.grad(ib) : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        T coef = T(2) * g.at(i, j);
        for (std::size_t c = 0; c < d; ++c) {
          T diff = av2.at(i, c) - bv2.at(j, c);
          if (ga) ga->at(i, c) += coef * diff;
          if (gb) gb->at(j, c) -= coef * diff;
        }
      }
  });
}

// --------------------------------------------------------- normalizations etc.

template <class T>
Var<T> softmax(Var<T> x) {
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.cols();
  Tensor<T> out(xv.shape);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const T* xr = xv.row(r);
    T* yr = out.row(r);
    T mx = *std::max_element(xr, xr + n);
    T s = T(0);
    for (std::size_t c = 0; c < n; ++c) s += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < n; ++c) yr[c] /= s;
  }
  int ix = x.id;
  return x.tape->record("softmax", std::move(out), {ix}, [ix, n](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>& y) {
    Tensor<T>& gx = tp.grad(ix);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      const T* yr = y.row(r);
      const T* gr = g.row(r);
      T inner = kernels::dot(gr, yr, n);
      T* gxr = gx.row(r);
      for (std::size_t c = 0; c < n; ++c) gxr[c] += yr[c] * (gr[c] - inner);
    }
  });
}

// Max-subtracted log-softmax over the last axis.
template <class T>
Var<T> log_softmax(Var<T> x) {
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.cols();
  Tensor<T> out(xv.shape);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const T* xr = xv.row(r);
    T mx = *std::max_element(xr, xr + n);
    T s = T(0);
    for (std::size_t c = 0; c < n; ++c) s += std::exp(xr[c] - mx);
    T lse = mx + std::log(s);
    for (std::size_t c = 0; c < n; ++c) out.row(r)[c] = xr[c] - lse;
  }
  int ix = x.id;
  return x.tape->record("log_softmax", std::move(out), {ix}, [ix, n](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>& y) {
    Tensor<T>& gx = tp.grad(ix);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      const T* gr = g.row(r);
      T gs = T(0);
      for (std::size_t c = 0; c < n; ++c) gs += gr[c];
      T* gxr = gx.row(r);
      for (std::size_t c = 0; c < n; ++c) gxr[c] += gr[c] - std::exp(y.row(r)[c]) * gs;
    }
  });
}

// Layer normalization over the last axis with affine gamma/beta.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  Tape<T>& t = detail::same_tape(x, gamma);
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.cols(), rows = xv.rows();
  require(gamma.size() == n && beta.size() == n, "layer_norm: affine size mismatch");
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  Tensor<T> out(xv.shape);
  std::vector<T> xhat(xv.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.row(r);
    T mu = T(0);
    for (std::size_t c = 0; c < n; ++c) mu += xr[c];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<T>(n);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      T h = (xr[c] - mu) * rstd[r];
      xhat[r * n + c] = h;
      out.row(r)[c] = h * gv[c] + bv[c];
    }
  }
  int ix = x.id, ig = gamma.id, ib = beta.id;
  return t.record("layer_norm", std::move(out), {ix, ig, ib},
                  [ix, ig, ib, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](
                      Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
                    const Tensor<T>& gv2 = tp.value(ig);
                    if (tp.needs_grad(ig) || tp.needs_grad(ib)) {
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < n; ++c) {
                          if (tp.needs_grad(ig)) tp.grad(ig)[c] += g.row(r)[c] * xhat[r * n + c];
                          if (tp.needs_grad(ib)) tp.grad(ib)[c] += g.row(r)[c];
                        }
                    }
                    if (!tp.needs_grad(ix)) return;
                    Tensor<T>& gx = tp.grad(ix);
                    std::vector<T> dh(n);
                    for (std::size_t r = 0; r < rows; ++r) {
                      T mean_dh = T(0), mean_dh_h = T(0);
                      for (std::size_t c = 0; c < n; ++c) {
                        dh[c] = g.row(r)[c] * gv2[c];
                        mean_dh += dh[c];
                        mean_dh_h += dh[c] * xhat[r * n + c];
                      }
                      mean_dh /= static_cast<T>(n);
                      mean_dh_h /= static_cast<T>(n);
                      for (std::size_t c = 0; c < n; ++c)
                        gx.row(r)[c] += rstd[r] * (dh[c] - mean_dh - xhat[r * n + c] * mean_dh_h);
                    }
                  });
}

// Row-wise x / (||x|| + eps) over the last axis.
template <class T>
Var<T> l2_normalize(Var<T> x, T eps = T(1e-12)) {
  require(eps > T(0), "l2_normalize: eps must be positive");
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.cols();
  Tensor<T> out(xv.shape);
  std::vector<T> norms(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    norms[r] = std::sqrt(kernels::dot(xv.row(r), xv.row(r), n));
    T inv = T(1) / (norms[r] + eps);
    for (std::size_t c = 0; c < n; ++c) out.row(r)[c] = xv.row(r)[c] * inv;
  }
  int ix = x.id;
  return x.tape->record("l2_normalize", std::move(out), {ix},
                        [ix, n, eps, norms = std::move(norms)](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
                          const Tensor<T>& xv2 = tp.value(ix);
                          Tensor<T>& gx = tp.grad(ix);
                          for (std::size_t r = 0; r < xv2.rows(); ++r) {
                            T nr = norms[r];
                            T denom = nr + eps;
                            T* gxr = gx.row(r);
                            const T* gr = g.row(r);
                            const T* xr = xv2.row(r);
                            kernels::axpy(gxr, gr, T(1) / denom, n);
                            if (nr > T(0)) {
                              T coef = -kernels::dot(xr, gr, n) / (nr * denom * denom);
                              kernels::axpy(gxr, xr, coef, n);
                            }
                          }
                        });
}

// ------------------------------------------------------- indexing and layout

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  require(shape_size(shape) == x.size(), "reshape: size mismatch " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor<T> out(std::move(shape), x.value().data);
  int ix = x.id;
  return x.tape->record("reshape", std::move(out), {ix}, [ix](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    kernels::axpy(tp.grad(ix).data.data(), g.data.data(), T(1), g.size());
  });
}

// Embedding lookup: table[V, d] rows at ids, output shape prefix + [d].
// Rows equal to padding_idx receive no gradient.
template <class T>
Var<T> gather(Var<T> table, const std::vector<int>& ids, Shape prefix, int padding_idx = -1) {
  const Tensor<T>& tv = table.value();
  require(tv.rank() == 2, "gather: table must be 2-D");
  require(shape_size(prefix) == ids.size(), "gather: prefix shape does not match id count");
  const std::size_t vocab = tv.rows(), d = tv.cols();
  Shape os = std::move(prefix);
  os.push_back(d);
  Tensor<T> out(os);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < vocab,
            "gather: id " + std::to_string(ids[i]) + " out of range [0," + std::to_string(vocab) + ")");
    std::copy_n(tv.row(static_cast<std::size_t>(ids[i])), d, out.row(i));
  }
  int it = table.id;
  return table.tape->record("gather", std::move(out), {it},
                            [it, ids, d, padding_idx](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
                              Tensor<T>& gt = tp.grad(it);
                              for (std::size_t i = 0; i < ids.size(); ++i) {
                                if (ids[i] == padding_idx) continue;
                                kernels::axpy(gt.row(static_cast<std::size_t>(ids[i])), g.row(i), T(1), d);
                              }
                            });
}

// Reference to one row of one of several tables; table < 0 means a zero row.
struct RowRef {
  int table = -1;
  int row = 0;
};

// Gather rows from several same-width tables into one array, as if the tables
// were concatenated. Used to assemble prompt streams from frozen token rows,
// projected item embeddings and special-token rows.
template <class T>
Var<T> gather_rows_multi(const std::vector<Var<T>>& tables, const std::vector<RowRef>& refs, Shape prefix) {
  require(!tables.empty(), "gather_rows_multi: no tables");
  require(shape_size(prefix) == refs.size(), "gather_rows_multi: prefix shape does not match ref count");
  Tape<T>& t = *tables.front().tape;
  const std::size_t d = tables.front().value().cols();
  std::vector<int> ids;
  for (const auto& tb : tables) {
    require(tb.tape == &t && tb.value().rank() == 2 && tb.value().cols() == d, "gather_rows_multi: table mismatch");
    ids.push_back(tb.id);
  }
  Shape os = std::move(prefix);
  os.push_back(d);
  Tensor<T> out(os);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const RowRef& r = refs[i];
    if (r.table < 0) continue;
    require(static_cast<std::size_t>(r.table) < tables.size(), "gather_rows_multi: bad table index");
    const Tensor<T>& tv = tables[static_cast<std::size_t>(r.table)].value();
    require(r.row >= 0 && static_cast<std::size_t>(r.row) < tv.rows(), "gather_rows_multi: row out of range");
    std::copy_n(tv.row(static_cast<std::size_t>(r.row)), d, out.row(i));
  }
  return t.record("gather_rows_multi", std::move(out), ids,
                  [ids, refs, d](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
                    for (std::size_t i = 0; i < refs.size(); ++i) {
                      const RowRef& r = refs[i];
                      if (r.table < 0) continue;
                      int id = ids[static_cast<std::size_t>(r.table)];
                      if (!tp.needs_grad(id)) continue;
                      kernels::axpy(tp.grad(id).row(static_cast<std::size_t>(r.row)), g.row(i), T(1), d);
                    }
                  });
}

// Element gather by flat index: out[j] = x.flat[index[j]].
template <class T>
Var<T> take(Var<T> x, const std::vector<std::size_t>& index, Shape shape) {
  require(shape_size(shape) == index.size(), "take: shape does not match index count");
  const Tensor<T>& xv = x.value();
  Tensor<T> out(std::move(shape));
  for (std::size_t j = 0; j < index.size(); ++j) {
    require(index[j] < xv.size(), "take: index out of range");
    out[j] = xv[index[j]];
  }
  int ix = x.id;
  return x.tape->record("take", std::move(out), {ix}, [ix, index](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& gx = tp.grad(ix);
    for (std::size_t j = 0; j < index.size(); ++j) gx[index[j]] += g[j];
  });
}

// Columns [begin, begin+count) of the last axis.
template <class T>
Var<T> slice_last(Var<T> x, std::size_t begin, std::size_t count) {
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.cols();
  require(begin + count <= n && count > 0, "slice_last: range out of bounds");
  Shape os = xv.shape;
  os.back() = count;
  Tensor<T> out(os);
  for (std::size_t r = 0; r < xv.rows(); ++r) std::copy_n(xv.row(r) + begin, count, out.row(r));
  int ix = x.id;
  return x.tape->record("slice_last", std::move(out), {ix}, [ix, begin, count, n](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& gx = tp.grad(ix);
    for (std::size_t r = 0; r < g.rows(); ++r) kernels::axpy(gx.data.data() + r * n + begin, g.row(r), T(1), count);
  });
}

// Concatenation along an axis; all other extents must agree.
template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  require(!parts.empty(), "concat: nothing to concatenate");
  Tape<T>& t = *parts.front().tape;
  const Shape& s0 = parts.front().shape();
  const int rank = static_cast<int>(s0.size());
  const int ax = axis < 0 ? axis + rank : axis;
  require(ax >= 0 && ax < rank, "concat: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s0[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < rank; ++i) inner *= s0[static_cast<std::size_t>(i)];
  Shape os = s0;
  os[static_cast<std::size_t>(ax)] = 0;
  std::vector<int> ids;
  std::vector<std::size_t> chunk;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    require(p.tape == &t && s.size() == s0.size(), "concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != ax) require(s[static_cast<std::size_t>(i)] == s0[static_cast<std::size_t>(i)], "concat: extent mismatch");
    os[static_cast<std::size_t>(ax)] += s[static_cast<std::size_t>(ax)];
    ids.push_back(p.id);
    chunk.push_back(s[static_cast<std::size_t>(ax)] * inner);
  }
  Tensor<T> out(os);
  const std::size_t row = os[static_cast<std::size_t>(ax)] * inner;
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& pv = parts[k].value();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(pv.data.data() + o * chunk[k], chunk[k], out.data.data() + o * row + off);
    off += chunk[k];
  }
  return t.record("concat", std::move(out), ids, [ids, chunk, outer, row](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    std::size_t off2 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.needs_grad(ids[k])) {
        Tensor<T>& gk = tp.grad(ids[k]);
        for (std::size_t o = 0; o < outer; ++o)
          kernels::axpy(gk.data.data() + o * chunk[k], g.data.data() + o * row + off2, T(1), chunk[k]);
      }
      off2 += chunk[k];
    }
  });
}

// Replace entries where mask is set. The mask covers the trailing extents of
// x and is broadcast over the leading ones; it carries no gradient.
template <class T>
Var<T> masked_fill(Var<T> x, const std::vector<unsigned char>& mask, T value) {
  const Tensor<T>& xv = x.value();
  require(!mask.empty() && xv.size() % mask.size() == 0, "masked_fill: mask does not tile the input");
  const std::size_t period = mask.size();
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i % period]) out[i] = value;
  int ix = x.id;
  return x.tape->record("masked_fill", std::move(out), {ix}, [ix, mask, period](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    Tensor<T>& gx = tp.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!mask[i % period]) gx[i] += g[i];
  });
}

}  // namespace seqdistill::num
