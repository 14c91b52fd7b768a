#include "snnet/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace snnet {
namespace {

// One-sided Jacobi on the columns of w [n × k], accumulating the right
// rotations into v [k × k]. Returns the worst remaining normalized coupling
// |wp·wq| / (‖wp‖·‖wq‖) over all column pairs.
double jacobi_sweep(std::vector<double>& w, std::vector<double>& v, int n, int k, bool rotate) {
  constexpr double tol = 1e-13;
  double worst = 0.0;
  for (int p = 0; p < k - 1; ++p) {
    for (int q = p + 1; q < k; ++q) {
      double alpha = 0.0, beta = 0.0, gamma = 0.0;
      for (int i = 0; i < n; ++i) {
        const double wp = w[static_cast<size_t>(i) * k + p];
        const double wq = w[static_cast<size_t>(i) * k + q];
        alpha += wp * wp;
        beta += wq * wq;
        gamma += wp * wq;
      }
      if (alpha == 0.0 || beta == 0.0) continue;
      const double coupling = std::abs(gamma) / std::sqrt(alpha * beta);
      worst = std::max(worst, coupling);
      if (!rotate || coupling <= tol) continue;
      const double zeta = (beta - alpha) / (2.0 * gamma);
      const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
      const double c = 1.0 / std::sqrt(1.0 + t * t);
      const double s = c * t;
      for (int i = 0; i < n; ++i) {
        const double wp = w[static_cast<size_t>(i) * k + p];
        const double wq = w[static_cast<size_t>(i) * k + q];
        w[static_cast<size_t>(i) * k + p] = c * wp - s * wq;
        w[static_cast<size_t>(i) * k + q] = s * wp + c * wq;
      }
      for (int i = 0; i < k; ++i) {
        const double vp = v[static_cast<size_t>(i) * k + p];
        const double vq = v[static_cast<size_t>(i) * k + q];
        v[static_cast<size_t>(i) * k + p] = c * vp - s * vq;
        v[static_cast<size_t>(i) * k + q] = s * vp + c * vq;
      }
    }
  }
  return worst;
}

// Tall-or-square case (n >= k): returns u [n×k], s [k], v [k×k] unsorted.
void jacobi_tall(const std::vector<double>& a, int n, int k, int max_sweeps,
                 std::vector<double>& u, std::vector<double>& s, std::vector<double>& v) {
  constexpr double tol = 1e-13;
  std::vector<double> w(a);
  v.assign(static_cast<size_t>(k) * k, 0.0);
  for (int i = 0; i < k; ++i) v[static_cast<size_t>(i) * k + i] = 1.0;

  bool converged = (k == 1);
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep)
    converged = jacobi_sweep(w, v, n, k, /*rotate=*/true) <= tol;
  if (!converged) {
    const double residual = jacobi_sweep(w, v, n, k, /*rotate=*/false);
    if (residual > tol) {
      double cmax = 0.0, cmin = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        double norm = 0.0;
        for (int i = 0; i < n; ++i) {
          const double x = w[static_cast<size_t>(i) * k + j];
          norm += x * x;
        }
        norm = std::sqrt(norm);
        cmax = std::max(cmax, norm);
        cmin = std::min(cmin, norm);
      }
      throw NumericalError(strf("svd: no convergence after ", max_sweeps, " sweeps on ", n, "x", k,
                                " matrix (residual coupling ", residual,
                                ", column norm range [", cmin, ", ", cmax, "])"));
    }
  }

  s.assign(static_cast<size_t>(k), 0.0);
  u.assign(static_cast<size_t>(n) * k, 0.0);
  for (int j = 0; j < k; ++j) {
    double norm = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = w[static_cast<size_t>(i) * k + j];
      norm += x * x;
    }
    norm = std::sqrt(norm);
    s[static_cast<size_t>(j)] = norm;
    if (norm > 0.0)
      for (int i = 0; i < n; ++i)
        u[static_cast<size_t>(i) * k + j] = w[static_cast<size_t>(i) * k + j] / norm;
  }
}

// Replaces numerically dead columns of u (s ≈ 0) with unit vectors
// orthogonalized against every other column, keeping u column-orthonormal.
void complete_basis(std::vector<double>& u, const std::vector<double>& s, int n, int k) {
  const double smax = s.empty() ? 0.0 : *std::max_element(s.begin(), s.end());
  const double dead = smax * 1e-12;
  for (int j = 0; j < k; ++j) {
    if (s[static_cast<size_t>(j)] > dead) continue;
    for (int e = 0; e < n; ++e) {
      std::vector<double> cand(static_cast<size_t>(n), 0.0);
      cand[static_cast<size_t>(e)] = 1.0;
      for (int j2 = 0; j2 < k; ++j2) {
        if (j2 == j) continue;
        double dot = 0.0;
        for (int i = 0; i < n; ++i) dot += cand[static_cast<size_t>(i)] * u[static_cast<size_t>(i) * k + j2];
        for (int i = 0; i < n; ++i) cand[static_cast<size_t>(i)] -= dot * u[static_cast<size_t>(i) * k + j2];
      }
      double norm = 0.0;
      for (double x : cand) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 0.5) {
        for (int i = 0; i < n; ++i) u[static_cast<size_t>(i) * k + j] = cand[static_cast<size_t>(i)] / norm;
        break;
      }
    }
  }
}

}  // namespace

SvdCoreResult svd_core(const std::vector<double>& a, int n, int k, int max_sweeps) {
  if (n < 1 || k < 1 || static_cast<int64_t>(a.size()) != static_cast<int64_t>(n) * k)
    throw ValueError(strf("svd: bad matrix ", n, "x", k, " with ", a.size(), " values"));

  // The one-sided pass wants at least as many rows as columns; for wide
  // matrices factor the transpose and swap the roles of U and V.
  if (n < k) {
    std::vector<double> at(a.size());
    transpose2(a.data(), at.data(), n, k);
    SvdCoreResult t = svd_core(at, k, n, max_sweeps);
    SvdCoreResult out;
    out.n = n;
    out.k = k;
    out.r = t.r;
    // A = (U_t S V_tᵀ)ᵀ = V_t S U_tᵀ: left vectors come from V_t, right from U_t.
    out.u.assign(static_cast<size_t>(n) * t.r, 0.0);
    transpose2(t.vt.data(), out.u.data(), t.r, n);
    out.s = t.s;
    out.vt.assign(static_cast<size_t>(t.r) * k, 0.0);
    transpose2(t.u.data(), out.vt.data(), k, t.r);
    // Re-apply the sign convention in terms of this orientation's U.
    for (int j = 0; j < out.r; ++j) {
      for (int i = 0; i < n; ++i) {
        const double x = out.u[static_cast<size_t>(i) * out.r + j];
        if (x == 0.0) continue;
        if (x < 0.0) {
          for (int i2 = 0; i2 < n; ++i2) out.u[static_cast<size_t>(i2) * out.r + j] = -out.u[static_cast<size_t>(i2) * out.r + j];
          for (int i2 = 0; i2 < k; ++i2) out.vt[static_cast<size_t>(j) * k + i2] = -out.vt[static_cast<size_t>(j) * k + i2];
        }
        break;
      }
    }
    return out;
  }

  std::vector<double> u, s, v;
  jacobi_tall(a, n, k, max_sweeps, u, s, v);

  // Sort the spectrum non-increasing; permute U columns and V columns along.
  std::vector<int> idx(static_cast<size_t>(k));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&s](int x, int y) { return s[static_cast<size_t>(x)] > s[static_cast<size_t>(y)]; });
  SvdCoreResult out;
  out.n = n;
  out.k = k;
  out.r = k;
  out.s.resize(static_cast<size_t>(k));
  out.u.assign(static_cast<size_t>(n) * k, 0.0);
  out.vt.assign(static_cast<size_t>(k) * k, 0.0);
  for (int j = 0; j < k; ++j) {
    const int src = idx[static_cast<size_t>(j)];
    out.s[static_cast<size_t>(j)] = s[static_cast<size_t>(src)];
    for (int i = 0; i < n; ++i)
      out.u[static_cast<size_t>(i) * k + j] = u[static_cast<size_t>(i) * k + src];
    for (int i = 0; i < k; ++i)
      out.vt[static_cast<size_t>(j) * k + i] = v[static_cast<size_t>(i) * k + src];
  }

  complete_basis(out.u, out.s, n, k);

  // Sign convention: first nonzero component of each left singular vector
  // is non-negative; the paired right vector flips with it.
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < n; ++i) {
      const double x = out.u[static_cast<size_t>(i) * k + j];
      if (x == 0.0) continue;
      if (x < 0.0) {
        for (int i2 = 0; i2 < n; ++i2) out.u[static_cast<size_t>(i2) * k + j] = -out.u[static_cast<size_t>(i2) * k + j];
        for (int i2 = 0; i2 < k; ++i2) out.vt[static_cast<size_t>(j) * k + i2] = -out.vt[static_cast<size_t>(j) * k + i2];
      }
      break;
    }
  }
  return out;
}

}  // namespace snnet
