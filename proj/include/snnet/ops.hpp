#pragma once

// Differentiable tensor operations. Every op validates shapes, computes its
// forward value, verifies the result is finite (blowups surface as
// NumericalError at the op that produced them), and — when gradient recording
// is on and an input needs gradients — attaches a backward closure to the tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "snnet/common.hpp"
#include "snnet/tensor.hpp"

namespace snnet {

// ---------------------------------------------------------------------------
// Raw kernels (row-major).

// C += A[n×k] · B[k×p]. i-k-j loop order keeps the inner loop a contiguous
// saxpy over C and B rows, which vectorizes without float reassociation.
template <typename T>
void mm_nn_acc(const T* a, const T* b, T* c, int n, int k, int p) {
  for (int i = 0; i < n; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    T* crow = c + static_cast<size_t>(i) * p;
    for (int kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = b + static_cast<size_t>(kk) * p;
      for (int j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += Aᵀ[k×n] · B[n×p] with A given as [n×k]; same saxpy structure.
template <typename T>
void mm_tn_acc(const T* a, const T* b, T* c, int n, int k, int p) {
  for (int i = 0; i < n; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    const T* brow = b + static_cast<size_t>(i) * p;
    for (int kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      T* crow = c + static_cast<size_t>(kk) * p;
      for (int j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void transpose2(const T* a, T* at, int n, int p) {
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) at[static_cast<size_t>(j) * n + i] = a[static_cast<size_t>(i) * p + j];
}

// C += A[n×k] · Bᵀ with B given as [p×k]; goes through an explicit transpose
// so the accumulating loop stays reassociation-free yet vectorizable. The
// scratch overload lets batched callers reuse one k·p transpose buffer.
template <typename T>
void mm_nt_acc(const T* a, const T* b, T* c, int n, int k, int p, T* scratch) {
  transpose2(b, scratch, p, k);
  mm_nn_acc(a, scratch, c, n, k, p);
}

template <typename T>
void mm_nt_acc(const T* a, const T* b, T* c, int n, int k, int p) {
  std::vector<T> bt(static_cast<size_t>(k) * p);
  mm_nt_acc(a, b, c, n, k, p, bt.data());
}

// ---------------------------------------------------------------------------
// Op plumbing.

template <typename T>
inline void check_finite(std::span<const T> v, const char* op) {
  for (const T& x : v)
    if (!std::isfinite(static_cast<double>(x)))
      throw NumericalError(strf(op, ": non-finite value in output"));
}

namespace detail {

template <typename T>
inline bool any_needs_grad(std::initializer_list<const TensorT<T>*> ts) {
  for (const auto* t : ts)
    if (t->needs_grad()) return true;
  return false;
}

// Builds the result tensor and, if recording applies, wires parents and the
// backward closure. `bwd` receives the result node (for its grad) and must
// accumulate into parent grads after ensure_grad().
template <typename T, typename Fn>
TensorT<T> attach(const char* op, std::vector<int> shape, std::vector<T> data,
                  std::initializer_list<const TensorT<T>*> parents, Fn&& bwd) {
  auto out = TensorT<T>::from(std::move(shape), std::move(data));
  check_finite<T>(out.data(), op);
  if (grad_mode() && any_needs_grad<T>(parents)) {
    auto* n = out.node();
    n->op = op;
    n->parents.reserve(parents.size());
    for (const auto* p : parents) n->parents.push_back(p->node_sp());
    n->backward_fn = std::forward<Fn>(bwd);
  }
  return out;
}

template <typename T>
inline void axpy(std::span<T> y, std::span<const T> x, T a) {
  for (size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline int64_t numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

// Flattens all leading dims: [d0,...,dk-1, last] -> rows = prod(d0..dk-1).
inline int64_t rows_before_last(const std::vector<int>& shape) {
  int64_t r = 1;
  for (size_t i = 0; i + 1 < shape.size(); ++i) r *= shape[i];
  return r;
}

template <typename T>
inline void require_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape())
    throw ValueError(strf(op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                          shape_str(b.shape())));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Core linear algebra ops.

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ValueError(strf("matmul: incompatible shapes ", shape_str(a.shape()), " vs ",
                          shape_str(b.shape())));
  const int n = a.dim(0), k = a.dim(1), p = b.dim(1);
  std::vector<T> out(static_cast<size_t>(n) * p, T{0});
  mm_nn_acc(a.data().data(), b.data().data(), out.data(), n, k, p);
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::attach<T>(
      "matmul", {n, p}, std::move(out), {&a, &b}, [pa, pb, n, k, p](NodeT<T>& self) {
        if (pa->needs_grad()) {
          pa->ensure_grad();
          mm_nt_acc(self.grad.data(), pb->data.data(), pa->grad.data(), n, p, k);
        }
        if (pb->needs_grad()) {
          pb->ensure_grad();
          mm_tn_acc(pa->data.data(), self.grad.data(), pb->grad.data(), n, k, p);
        }
      });
}

// y = x·W + bias, applied row-wise with all leading dims of x flattened.
// W is [in×out], bias is [out].
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias) {
  if (x.ndim() < 2 || w.ndim() != 2 || bias.ndim() != 1 || x.dim(x.ndim() - 1) != w.dim(0) ||
      bias.dim(0) != w.dim(1))
    throw ValueError(strf("linear: incompatible shapes x=", shape_str(x.shape()),
                          " w=", shape_str(w.shape()), " bias=", shape_str(bias.shape())));
  const int64_t rows = detail::rows_before_last(x.shape());
  const int in = w.dim(0), out_dim = w.dim(1);
  std::vector<T> out(static_cast<size_t>(rows) * out_dim);
  for (int64_t r = 0; r < rows; ++r)
    std::copy(bias.data().begin(), bias.data().end(), out.begin() + r * out_dim);
  mm_nn_acc(x.data().data(), w.data().data(), out.data(), static_cast<int>(rows), in, out_dim);
  std::vector<int> oshape(x.shape());
  oshape.back() = out_dim;
  auto* px = x.node();
  auto* pw = w.node();
  auto* pbias = bias.node();
  return detail::attach<T>(
      "linear", std::move(oshape), std::move(out), {&x, &w, &bias},
      [px, pw, pbias, rows, in, out_dim](NodeT<T>& self) {
        const int r = static_cast<int>(rows);
        if (px->needs_grad()) {
          px->ensure_grad();
          mm_nt_acc(self.grad.data(), pw->data.data(), px->grad.data(), r, out_dim, in);
        }
        if (pw->needs_grad()) {
          pw->ensure_grad();
          mm_tn_acc(px->data.data(), self.grad.data(), pw->grad.data(), r, in, out_dim);
        }
        if (pbias->needs_grad()) {
          pbias->ensure_grad();
          for (int64_t i = 0; i < rows; ++i)
            for (int j = 0; j < out_dim; ++j) pbias->grad[j] += self.grad[i * out_dim + j];
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise and scalar ops.

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<T> out(a.data().begin(), a.data().end());
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::attach<T>("add", a.shape(), std::move(out), {&a, &b}, [pa, pb](NodeT<T>& self) {
    if (pa->needs_grad()) {
      pa->ensure_grad();
      detail::axpy<T>(pa->grad, self.grad, T{1});
    }
    if (pb->needs_grad()) {
      pb->ensure_grad();
      detail::axpy<T>(pb->grad, self.grad, T{1});
    }
  });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<T> out(a.data().begin(), a.data().end());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::attach<T>("mul", a.shape(), std::move(out), {&a, &b}, [pa, pb](NodeT<T>& self) {
    if (pa->needs_grad()) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->data[i];
    }
    if (pb->needs_grad()) {
      pb->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->data[i];
    }
  });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= c;
  auto* pa = a.node();
  return detail::attach<T>("scale", a.shape(), std::move(out), {&a}, [pa, c](NodeT<T>& self) {
    pa->ensure_grad();
    detail::axpy<T>(pa->grad, self.grad, c);
  });
}

// Exact Gaussian-CDF form: 0.5·x·(1 + erf(x/√2)).
template <typename T>
TensorT<T> gelu(const TensorT<T>& a) {
  std::vector<T> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = static_cast<double>(a.data()[i]);
    out[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)));
  }
  auto* pa = a.node();
  return detail::attach<T>("gelu", a.shape(), std::move(out), {&a}, [pa](NodeT<T>& self) {
    pa->ensure_grad();
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double x = static_cast<double>(pa->data[i]);
      const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
      const double d = cdf + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      pa->grad[i] += self.grad[i] * static_cast<T>(d);
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization / reduction over the last dimension.

template <typename T>
TensorT<T> softmax_last(const TensorT<T>& a) {
  const int d = a.dim(a.ndim() - 1);
  const int64_t rows = detail::rows_before_last(a.shape());
  std::vector<T> out(a.data().size());
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = a.data().data() + r * d;
    T* y = out.data() + r * d;
    T mx = x[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < d; ++j) {
      const double e = std::exp(static_cast<double>(x[j] - mx));
      y[j] = static_cast<T>(e);
      sum += e;
    }
    const T inv = static_cast<T>(1.0 / sum);
    for (int j = 0; j < d; ++j) y[j] *= inv;
  }
  auto* pa = a.node();
  std::vector<T> saved(out);
  return detail::attach<T>("softmax", a.shape(), std::move(out), {&a},
                           [pa, d, rows, y = std::move(saved)](NodeT<T>& self) {
                             pa->ensure_grad();
                             for (int64_t r = 0; r < rows; ++r) {
                               const T* yr = y.data() + r * d;
                               const T* gr = self.grad.data() + r * d;
                               double dot = 0.0;
                               for (int j = 0; j < d; ++j)
                                 dot += static_cast<double>(gr[j]) * yr[j];
                               for (int j = 0; j < d; ++j)
                                 pa->grad[r * d + j] += yr[j] * (gr[j] - static_cast<T>(dot));
                             }
                           });
}

template <typename T>
TensorT<T> log_softmax_last(const TensorT<T>& a) {
  const int d = a.dim(a.ndim() - 1);
  const int64_t rows = detail::rows_before_last(a.shape());
  std::vector<T> out(a.data().size());
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = a.data().data() + r * d;
    T* y = out.data() + r * d;
    T mx = x[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (int j = 0; j < d; ++j) sum += std::exp(static_cast<double>(x[j] - mx));
    const T lse = mx + static_cast<T>(std::log(sum));
    for (int j = 0; j < d; ++j) y[j] = x[j] - lse;
  }
  auto* pa = a.node();
  std::vector<T> saved(out);
  return detail::attach<T>("log_softmax", a.shape(), std::move(out), {&a},
                           [pa, d, rows, y = std::move(saved)](NodeT<T>& self) {
                             pa->ensure_grad();
                             for (int64_t r = 0; r < rows; ++r) {
                               const T* yr = y.data() + r * d;
                               const T* gr = self.grad.data() + r * d;
                               double gs = 0.0;
                               for (int j = 0; j < d; ++j) gs += gr[j];
                               for (int j = 0; j < d; ++j)
                                 pa->grad[r * d + j] +=
                                     gr[j] - static_cast<T>(std::exp(static_cast<double>(yr[j])) * gs);
                             }
                           });
}

// Normalizes each last-dim row to zero mean / unit variance, then applies an
// elementwise affine (gamma, beta). Biased variance, stabilized by eps.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps = static_cast<T>(1e-5)) {
  const int d = x.dim(x.ndim() - 1);
  if (gamma.ndim() != 1 || gamma.dim(0) != d || beta.ndim() != 1 || beta.dim(0) != d)
    throw ValueError(strf("layer_norm: x=", shape_str(x.shape()), " gamma=",
                          shape_str(gamma.shape()), " beta=", shape_str(beta.shape())));
  const int64_t rows = detail::rows_before_last(x.shape());
  std::vector<T> out(x.data().size());
  std::vector<T> xhat(x.data().size());
  std::vector<T> rstd(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xr[j] - mu;
      var += c * c;
    }
    var /= d;
    const double rs = 1.0 / std::sqrt(var + static_cast<double>(eps));
    rstd[static_cast<size_t>(r)] = static_cast<T>(rs);
    for (int j = 0; j < d; ++j) {
      const T h = static_cast<T>((xr[j] - mu) * rs);
      xhat[r * d + j] = h;
      out[r * d + j] = gamma.data()[j] * h + beta.data()[j];
    }
  }
  auto* px = x.node();
  auto* pg = gamma.node();
  auto* pb = beta.node();
  return detail::attach<T>(
      "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [px, pg, pb, d, rows, xh = std::move(xhat), rs = std::move(rstd)](NodeT<T>& self) {
        const bool need_x = px->needs_grad();
        if (need_x) px->ensure_grad();
        if (pg->needs_grad()) pg->ensure_grad();
        if (pb->needs_grad()) pb->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
          const T* gr = self.grad.data() + r * d;
          const T* hr = xh.data() + r * d;
          if (pg->needs_grad())
            for (int j = 0; j < d; ++j) pg->grad[j] += gr[j] * hr[j];
          if (pb->needs_grad())
            for (int j = 0; j < d; ++j) pb->grad[j] += gr[j];
          if (need_x) {
            double s1 = 0.0, s2 = 0.0;  // sum(dxhat), sum(dxhat*xhat)
            for (int j = 0; j < d; ++j) {
              const double dh = static_cast<double>(gr[j]) * pg->data[j];
              s1 += dh;
              s2 += dh * hr[j];
            }
            const double k = static_cast<double>(rs[static_cast<size_t>(r)]) / d;
            for (int j = 0; j < d; ++j) {
              const double dh = static_cast<double>(gr[j]) * pg->data[j];
              px->grad[r * d + j] += static_cast<T>(k * (d * dh - s1 - hr[j] * s2));
            }
          }
        }
      });
}

// Mean over one axis; output drops that axis.
template <typename T>
TensorT<T> mean_axis(const TensorT<T>& a, int axis) {
  if (axis < 0 || axis >= a.ndim())
    throw ValueError(strf("mean_axis: axis ", axis, " out of range for ", shape_str(a.shape())));
  const auto& sh = a.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[static_cast<size_t>(i)];
  for (int i = axis + 1; i < a.ndim(); ++i) inner *= sh[static_cast<size_t>(i)];
  const int n = sh[static_cast<size_t>(axis)];
  std::vector<int> oshape;
  for (int i = 0; i < a.ndim(); ++i)
    if (i != axis) oshape.push_back(sh[static_cast<size_t>(i)]);
  if (oshape.empty()) oshape.push_back(1);
  std::vector<T> out(static_cast<size_t>(outer) * inner, T{0});
  const T* src = a.data().data();
  for (int64_t o = 0; o < outer; ++o)
    for (int j = 0; j < n; ++j) {
      const T* row = src + (o * n + j) * inner;
      T* dst = out.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += row[i];
    }
  const T invn = T{1} / static_cast<T>(n);
  for (auto& v : out) v *= invn;
  auto* pa = a.node();
  return detail::attach<T>("mean_axis", std::move(oshape), std::move(out), {&a},
                           [pa, outer, inner, n, invn](NodeT<T>& self) {
                             pa->ensure_grad();
                             for (int64_t o = 0; o < outer; ++o)
                               for (int j = 0; j < n; ++j) {
                                 T* dst = pa->grad.data() + (o * n + j) * inner;
                                 const T* g = self.grad.data() + o * inner;
                                 for (int64_t i = 0; i < inner; ++i) dst[i] += g[i] * invn;
                               }
                           });
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& a) {
  double s = 0.0;
  for (const T& v : a.data()) s += v;
  auto* pa = a.node();
  return detail::attach<T>("sum_all", {1}, {static_cast<T>(s)}, {&a}, [pa](NodeT<T>& self) {
    pa->ensure_grad();
    for (auto& g : pa->grad) g += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Shape ops.

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, std::vector<int> shape) {
  if (detail::numel_of(shape) != a.numel())
    throw ValueError(strf("reshape: ", shape_str(a.shape()), " -> ", shape_str(shape),
                          " changes element count"));
  std::vector<T> out(a.data().begin(), a.data().end());
  auto* pa = a.node();
  return detail::attach<T>("reshape", std::move(shape), std::move(out), {&a},
                           [pa](NodeT<T>& self) {
                             pa->ensure_grad();
                             detail::axpy<T>(pa->grad, self.grad, T{1});
                           });
}

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& a) {
  if (a.ndim() != 2) throw ValueError(strf("transpose2d: want 2-d, got ", shape_str(a.shape())));
  const int n = a.dim(0), p = a.dim(1);
  std::vector<T> out(a.data().size());
  transpose2(a.data().data(), out.data(), n, p);
  auto* pa = a.node();
  return detail::attach<T>("transpose2d", {p, n}, std::move(out), {&a}, [pa, n, p](NodeT<T>& self) {
    pa->ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j)
        pa->grad[static_cast<size_t>(i) * p + j] += self.grad[static_cast<size_t>(j) * n + i];
  });
}

// Concatenation along axis 0; all inputs must agree on trailing dims.
template <typename T>
TensorT<T> concat0(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) throw ValueError("concat0: no inputs");
  std::vector<int> oshape = parts[0].shape();
  int64_t total0 = 0;
  for (const auto& p : parts) {
    if (p.ndim() != static_cast<int>(oshape.size()) ||
        !std::equal(oshape.begin() + 1, oshape.end(), p.shape().begin() + 1))
      throw ValueError(strf("concat0: shape mismatch ", shape_str(oshape), " vs ",
                            shape_str(p.shape())));
    total0 += p.dim(0);
  }
  oshape[0] = static_cast<int>(total0);
  std::vector<T> out;
  out.reserve(static_cast<size_t>(detail::numel_of(oshape)));
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());

  auto result = TensorT<T>::from(std::move(oshape), std::move(out));
  check_finite<T>(result.data(), "concat0");
  bool needs = false;
  for (const auto& p : parts) needs = needs || p.needs_grad();
  if (grad_mode() && needs) {
    auto* n = result.node();
    n->op = "concat0";
    std::vector<NodeT<T>*> raw;
    for (const auto& p : parts) {
      n->parents.push_back(p.node_sp());
      raw.push_back(p.node());
    }
    n->backward_fn = [raw = std::move(raw)](NodeT<T>& self) {
      size_t off = 0;
      for (auto* p : raw) {
        const size_t sz = p->data.size();
        if (p->needs_grad()) {
          p->ensure_grad();
          for (size_t i = 0; i < sz; ++i) p->grad[i] += self.grad[off + i];
        }
        off += sz;
      }
    };
  }
  return result;
}

// Slice [start, start+len) of the last dimension.
template <typename T>
TensorT<T> slice_last(const TensorT<T>& a, int start, int len) {
  const int d = a.dim(a.ndim() - 1);
  if (start < 0 || len <= 0 || start + len > d)
    throw ValueError(strf("slice_last: [", start, ", ", start + len, ") out of range for ",
                          shape_str(a.shape())));
  const int64_t rows = detail::rows_before_last(a.shape());
  std::vector<int> oshape = a.shape();
  oshape.back() = len;
  std::vector<T> out(static_cast<size_t>(rows) * len);
  for (int64_t r = 0; r < rows; ++r)
    std::copy_n(a.data().data() + r * d + start, len, out.data() + r * len);
  auto* pa = a.node();
  return detail::attach<T>("slice_last", std::move(oshape), std::move(out), {&a},
                           [pa, d, start, len, rows](NodeT<T>& self) {
                             pa->ensure_grad();
                             for (int64_t r = 0; r < rows; ++r)
                               for (int j = 0; j < len; ++j)
                                 pa->grad[r * d + start + j] += self.grad[r * len + j];
                           });
}

// [B, N, H·hd] -> [B, H, N, hd]: exposes per-head rows for batched attention.
template <typename T>
TensorT<T> split_heads(const TensorT<T>& a, int heads) {
  if (a.ndim() != 3 || a.dim(2) % heads != 0)
    throw ValueError(strf("split_heads: ", shape_str(a.shape()), " with ", heads, " heads"));
  const int B = a.dim(0), N = a.dim(1), D = a.dim(2), hd = D / heads;
  std::vector<T> out(a.data().size());
  const T* src = a.data().data();
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < N; ++t)
      for (int h = 0; h < heads; ++h)
        std::copy_n(src + ((static_cast<int64_t>(b) * N + t) * D) + h * hd, hd,
                    out.data() + (((static_cast<int64_t>(b) * heads + h) * N) + t) * hd);
  auto* pa = a.node();
  return detail::attach<T>("split_heads", {B, heads, N, hd}, std::move(out), {&a},
                           [pa, B, N, heads, hd, D](NodeT<T>& self) {
                             pa->ensure_grad();
                             for (int b = 0; b < B; ++b)
                               for (int t = 0; t < N; ++t)
                                 for (int h = 0; h < heads; ++h) {
                                   const T* g = self.grad.data() +
                                                (((static_cast<int64_t>(b) * heads + h) * N) + t) * hd;
                                   T* dst = pa->grad.data() +
                                            ((static_cast<int64_t>(b) * N + t) * D) + h * hd;
                                   for (int j = 0; j < hd; ++j) dst[j] += g[j];
                                 }
                           });
}

// [B, H, N, hd] -> [B, N, H·hd]; inverse of split_heads.
template <typename T>
TensorT<T> merge_heads(const TensorT<T>& a) {
  if (a.ndim() != 4) throw ValueError(strf("merge_heads: want 4-d, got ", shape_str(a.shape())));
  const int B = a.dim(0), heads = a.dim(1), N = a.dim(2), hd = a.dim(3), D = heads * hd;
  std::vector<T> out(a.data().size());
  const T* src = a.data().data();
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (int t = 0; t < N; ++t)
        std::copy_n(src + (((static_cast<int64_t>(b) * heads + h) * N) + t) * hd, hd,
                    out.data() + ((static_cast<int64_t>(b) * N + t) * D) + h * hd);
  auto* pa = a.node();
  return detail::attach<T>("merge_heads", {B, N, D}, std::move(out), {&a},
                           [pa, B, N, heads, hd, D](NodeT<T>& self) {
                             pa->ensure_grad();
                             for (int b = 0; b < B; ++b)
                               for (int h = 0; h < heads; ++h)
                                 for (int t = 0; t < N; ++t) {
                                   const T* g = self.grad.data() +
                                                ((static_cast<int64_t>(b) * N + t) * D) + h * hd;
                                   T* dst = pa->grad.data() +
                                            (((static_cast<int64_t>(b) * heads + h) * N) + t) * hd;
                                   for (int j = 0; j < hd; ++j) dst[j] += g[j];
                                 }
                           });
}

// Batched a·bᵀ over the two leading dims: [B,H,N,d] × [B,H,M,d] -> [B,H,N,M].
template <typename T>
TensorT<T> bmm_nt(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() != 4 || b.ndim() != 4 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1) ||
      a.dim(3) != b.dim(3))
    throw ValueError(strf("bmm_nt: incompatible shapes ", shape_str(a.shape()), " vs ",
                          shape_str(b.shape())));
  const int64_t batch = static_cast<int64_t>(a.dim(0)) * a.dim(1);
  const int n = a.dim(2), d = a.dim(3), m = b.dim(2);
  std::vector<T> out(static_cast<size_t>(batch) * n * m, T{0});
  std::vector<T> scratch(static_cast<size_t>(d) * m);
  for (int64_t g = 0; g < batch; ++g)
    mm_nt_acc(a.data().data() + g * n * d, b.data().data() + g * m * d, out.data() + g * n * m, n,
              d, m, scratch.data());
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::attach<T>(
      "bmm_nt", {a.dim(0), a.dim(1), n, m}, std::move(out), {&a, &b},
      [pa, pb, batch, n, d, m](NodeT<T>& self) {
        for (int64_t g = 0; g < batch; ++g) {
          const T* gr = self.grad.data() + g * n * m;
          if (pa->needs_grad()) {
            pa->ensure_grad();
            mm_nn_acc(gr, pb->data.data() + g * m * d, pa->grad.data() + g * n * d, n, m, d);
          }
          if (pb->needs_grad()) {
            pb->ensure_grad();
            mm_tn_acc(gr, pa->data.data() + g * n * d, pb->grad.data() + g * m * d, n, m, d);
          }
        }
      });
}

// Batched a·b over the two leading dims: [B,H,N,M] × [B,H,M,d] -> [B,H,N,d].
template <typename T>
TensorT<T> bmm_nn(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() != 4 || b.ndim() != 4 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1) ||
      a.dim(3) != b.dim(2))
    throw ValueError(strf("bmm_nn: incompatible shapes ", shape_str(a.shape()), " vs ",
                          shape_str(b.shape())));
  const int64_t batch = static_cast<int64_t>(a.dim(0)) * a.dim(1);
  const int n = a.dim(2), m = a.dim(3), d = b.dim(3);
  std::vector<T> out(static_cast<size_t>(batch) * n * d, T{0});
  for (int64_t g = 0; g < batch; ++g)
    mm_nn_acc(a.data().data() + g * n * m, b.data().data() + g * m * d, out.data() + g * n * d, n,
              m, d);
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::attach<T>(
      "bmm_nn", {a.dim(0), a.dim(1), n, d}, std::move(out), {&a, &b},
      [pa, pb, batch, n, m, d](NodeT<T>& self) {
        std::vector<T> scratch(static_cast<size_t>(d) * m);
        for (int64_t g = 0; g < batch; ++g) {
          const T* gr = self.grad.data() + g * n * d;
          if (pa->needs_grad()) {
            pa->ensure_grad();
            mm_nt_acc(gr, pb->data.data() + g * m * d, pa->grad.data() + g * n * m, n, d, m,
                      scratch.data());
          }
          if (pb->needs_grad()) {
            pb->ensure_grad();
            mm_tn_acc(pa->data.data() + g * n * m, gr, pb->grad.data() + g * m * d, n, m, d);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Losses.

// Mean negative log-likelihood of integer labels under softmax(logits).
template <typename T>
TensorT<T> cross_entropy_mean(const TensorT<T>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2 || static_cast<size_t>(logits.dim(0)) != labels.size())
    throw ValueError(strf("cross_entropy_mean: logits ", shape_str(logits.shape()), " vs ",
                          labels.size(), " labels"));
  const int B = logits.dim(0), C = logits.dim(1);
  for (int y : labels)
    if (y < 0 || y >= C)
      throw ValueError(strf("cross_entropy_mean: label ", y, " outside [0, ", C, ")"));
  // Row-wise log-softmax in double, saved for the backward pass.
  std::vector<double> logp(static_cast<size_t>(B) * C);
  double loss = 0.0;
  for (int r = 0; r < B; ++r) {
    const T* x = logits.data().data() + static_cast<int64_t>(r) * C;
    double mx = x[0];
    for (int j = 1; j < C; ++j) mx = std::max(mx, static_cast<double>(x[j]));
    double sum = 0.0;
    for (int j = 0; j < C; ++j) sum += std::exp(x[j] - mx);
    const double lse = mx + std::log(sum);
    for (int j = 0; j < C; ++j) logp[static_cast<size_t>(r) * C + j] = x[j] - lse;
    loss -= logp[static_cast<size_t>(r) * C + labels[static_cast<size_t>(r)]];
  }
  loss /= B;
  auto* pl = logits.node();
  return detail::attach<T>(
      "cross_entropy_mean", {1}, {static_cast<T>(loss)}, {&logits},
      [pl, B, C, labels, lp = std::move(logp)](NodeT<T>& self) {
        pl->ensure_grad();
        const double g = static_cast<double>(self.grad[0]) / B;
        for (int r = 0; r < B; ++r)
          for (int j = 0; j < C; ++j) {
            const double p = std::exp(lp[static_cast<size_t>(r) * C + j]);
            const double onehot = (j == labels[static_cast<size_t>(r)]) ? 1.0 : 0.0;
            pl->grad[static_cast<int64_t>(r) * C + j] += static_cast<T>(g * (p - onehot));
          }
      });
}

// Mean cross-entropy against fixed probability targets (soft labels):
// -mean_rows sum_c target[c] · log_softmax(logits)[c]. No gradient flows to
// the targets.
template <typename T>
TensorT<T> soft_cross_entropy_mean(const TensorT<T>& logits, const TensorT<T>& targets) {
  detail::require_same_shape("soft_cross_entropy_mean", logits, targets);
  if (logits.ndim() != 2) throw ValueError("soft_cross_entropy_mean: want 2-d logits");
  const int B = logits.dim(0), C = logits.dim(1);
  std::vector<double> logp(static_cast<size_t>(B) * C);
  std::vector<double> tgt(targets.data().begin(), targets.data().end());
  double loss = 0.0;
  for (int r = 0; r < B; ++r) {
    const T* x = logits.data().data() + static_cast<int64_t>(r) * C;
    double mx = x[0];
    for (int j = 1; j < C; ++j) mx = std::max(mx, static_cast<double>(x[j]));
    double sum = 0.0;
    for (int j = 0; j < C; ++j) sum += std::exp(x[j] - mx);
    const double lse = mx + std::log(sum);
    for (int j = 0; j < C; ++j) {
      logp[static_cast<size_t>(r) * C + j] = x[j] - lse;
      loss -= tgt[static_cast<size_t>(r) * C + j] * (x[j] - lse);
    }
  }
  loss /= B;
  auto* pl = logits.node();
  return detail::attach<T>(
      "soft_cross_entropy_mean", {1}, {static_cast<T>(loss)}, {&logits},
      [pl, B, C, lp = std::move(logp), tg = std::move(tgt)](NodeT<T>& self) {
        pl->ensure_grad();
        const double g = static_cast<double>(self.grad[0]) / B;
        for (int r = 0; r < B; ++r) {
          double trow = 0.0;
          for (int j = 0; j < C; ++j) trow += tg[static_cast<size_t>(r) * C + j];
          for (int j = 0; j < C; ++j) {
            const double p = std::exp(lp[static_cast<size_t>(r) * C + j]);
            pl->grad[static_cast<int64_t>(r) * C + j] +=
                static_cast<T>(g * (p * trow - tg[static_cast<size_t>(r) * C + j]));
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Non-differentiable helpers.

template <typename T>
std::vector<int> argmax_rows(const TensorT<T>& a) {
  if (a.ndim() != 2) throw ValueError(strf("argmax_rows: want 2-d, got ", shape_str(a.shape())));
  const int B = a.dim(0), C = a.dim(1);
  std::vector<int> out(static_cast<size_t>(B));
  for (int r = 0; r < B; ++r) {
    const T* x = a.data().data() + static_cast<int64_t>(r) * C;
    int best = 0;
    for (int j = 1; j < C; ++j)
      if (x[j] > x[best]) best = j;
    out[static_cast<size_t>(r)] = best;
  }
  return out;
}

}  // namespace snnet
