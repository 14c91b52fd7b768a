#pragma once

// Singular value decomposition and Moore–Penrose pseudoinverse. The core
// factorization runs one-sided (Hestenes) Jacobi in 64-bit floats regardless
// of the tensor scalar type; results are cast back on the way out.

#include <cstdint>
#include <vector>

#include "snnet/common.hpp"
#include "snnet/ops.hpp"
#include "snnet/tensor.hpp"

namespace snnet {

struct SvdCoreResult {
  std::vector<double> u;   // [n × r] column-orthonormal
  std::vector<double> s;   // [r] non-increasing, non-negative
  std::vector<double> vt;  // [r × k] row-orthonormal
  int n = 0, k = 0, r = 0;
};

// Thin SVD of a row-major n×k matrix. Orthogonalizes columns by Jacobi
// rotations; throws NumericalError with condition diagnostics if the rotation
// sweeps fail to converge within max_sweeps. Sign convention: the first
// nonzero component of each left singular vector is non-negative.
SvdCoreResult svd_core(const std::vector<double>& a, int n, int k, int max_sweeps = 100);

template <typename T>
struct SvdResultT {
  TensorT<T> u;   // [n × r]
  TensorT<T> s;   // [r]
  TensorT<T> vt;  // [r × k]
};

template <typename T>
SvdResultT<T> svd(const TensorT<T>& a, int max_sweeps = 100) {
  if (a.ndim() != 2) throw ValueError(strf("svd: want 2-d, got ", shape_str(a.shape())));
  check_finite(a.data(), "svd input");
  const int n = a.dim(0), k = a.dim(1);
  std::vector<double> ad(a.data().begin(), a.data().end());
  SvdCoreResult c = svd_core(ad, n, k, max_sweeps);
  SvdResultT<T> out;
  out.u = TensorT<T>::from({c.n, c.r}, std::vector<T>(c.u.begin(), c.u.end()));
  out.s = TensorT<T>::from({c.r}, std::vector<T>(c.s.begin(), c.s.end()));
  out.vt = TensorT<T>::from({c.r, c.k}, std::vector<T>(c.vt.begin(), c.vt.end()));
  return out;
}

// A† = V · diag(1/sᵢ where sᵢ > rcond·s_max, else 0) · Uᵀ, computed in f64.
template <typename T>
TensorT<T> pinv(const TensorT<T>& a, T rcond = static_cast<T>(1e-6)) {
  if (a.ndim() != 2) throw ValueError(strf("pinv: want 2-d, got ", shape_str(a.shape())));
  if (!(rcond > T{0})) throw ValueError(strf("pinv: rcond must be > 0, got ", rcond));
  check_finite(a.data(), "pinv input");
  const int n = a.dim(0), k = a.dim(1);
  std::vector<double> ad(a.data().begin(), a.data().end());
  SvdCoreResult c = svd_core(ad, n, k);
  const double cutoff = static_cast<double>(rcond) * (c.s.empty() ? 0.0 : c.s[0]);
  // Scale the rows of Uᵀ (i.e. columns of U) by the inverted spectrum, then
  // multiply by V: out[k×n] = Vᵀᵀ · (S⁺ Uᵀ).
  std::vector<double> su(static_cast<size_t>(c.r) * c.n, 0.0);  // S⁺·Uᵀ, [r × n]
  for (int j = 0; j < c.r; ++j) {
    if (c.s[static_cast<size_t>(j)] > cutoff) {
      const double inv = 1.0 / c.s[static_cast<size_t>(j)];
      for (int i = 0; i < c.n; ++i)
        su[static_cast<size_t>(j) * c.n + i] = inv * c.u[static_cast<size_t>(i) * c.r + j];
    }
  }
  std::vector<double> v(static_cast<size_t>(c.k) * c.r);  // V = vtᵀ, [k × r]
  transpose2(c.vt.data(), v.data(), c.r, c.k);
  std::vector<double> out(static_cast<size_t>(c.k) * c.n, 0.0);
  mm_nn_acc(v.data(), su.data(), out.data(), c.k, c.r, c.n);
  return TensorT<T>::from({k, n}, std::vector<T>(out.begin(), out.end()));
}

}  // namespace snnet
