#pragma once

#include <cmath>

#include <manekit/types.hpp>

namespace manekit {

// Central-difference steps scale with the coordinate magnitude.
template <typename S>
S fd_step(S x, S h0) {
  return h0 * (S(1) + std::abs(x));
}

template <typename S, typename F>
VecX<S> fd_gradient(F&& f, const VecX<S>& x, S h0 = S(1e-5)) {
  VecX<S> g(x.size());
  VecX<S> xp = x, xm = x;
  for (int i = 0; i < x.size(); ++i) {
    const S h = fd_step(x[i], h0);
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    g[i] = (f(xp) - f(xm)) / (2 * h);
    xp[i] = x[i];
    xm[i] = x[i];
  }
  return g;
}

// One Richardson sweep over the central difference: (4 D_{h/2} - D_h) / 3.
template <typename S, typename F>
VecX<S> fd_gradient_richardson(F&& f, const VecX<S>& x, S h0 = S(1e-4)) {
  const VecX<S> coarse = fd_gradient(f, x, h0);
  const VecX<S> fine = fd_gradient(f, x, h0 / 2);
  return (S(4) * fine - coarse) / S(3);
}

// Jacobian of a vector-valued map, one column per input coordinate.
template <typename S, typename F>
MatX<S> fd_jacobian(F&& f, const VecX<S>& x, S h0 = S(1e-5)) {
  VecX<S> xp = x, xm = x;
  MatX<S> jac;
  for (int i = 0; i < x.size(); ++i) {
    const S h = fd_step(x[i], h0);
    xp[i] = x[i] + h;
    xm[i] = x[i] - h;
    const VecX<S> col = (f(xp) - f(xm)) / (2 * h);
    if (jac.size() == 0) jac.resize(col.size(), x.size());
    jac.col(i) = col;
    xp[i] = x[i];
    xm[i] = x[i];
  }
  return jac;
}

template <typename S, typename F>
MatX<S> fd_jacobian_richardson(F&& f, const VecX<S>& x, S h0 = S(1e-4)) {
  const MatX<S> coarse = fd_jacobian(f, x, h0);
  const MatX<S> fine = fd_jacobian(f, x, h0 / 2);
  return (S(4) * fine - coarse) / S(3);
}

// Hessian via central differences of a gradient callback, symmetrized.
template <typename S, typename G>
MatX<S> fd_hessian_from_gradient(G&& grad, const VecX<S>& x, S h0 = S(1e-4)) {
  const MatX<S> jac = fd_jacobian(grad, x, h0);
  return ((jac + jac.transpose()) / 2).eval();
}

template <typename S, typename G>
MatX<S> fd_hessian_from_gradient_richardson(G&& grad, const VecX<S>& x,
                                            S h0 = S(1e-4)) {
  const MatX<S> jac = fd_jacobian_richardson(grad, x, h0);
  return ((jac + jac.transpose()) / 2).eval();
}

// Hessian from values only: standard 3-point diagonal and 4-point cross
// stencils.  Symmetric by construction.
template <typename S, typename F>
MatX<S> fd_hessian_value(F&& f, const VecX<S>& x, S h0 = S(1e-4)) {
  const int n = static_cast<int>(x.size());
  MatX<S> hess(n, n);
  const S f0 = f(x);
  VecX<S> y = x;
  for (int i = 0; i < n; ++i) {
    const S hi = fd_step(x[i], h0);
    y[i] = x[i] + hi;
    const S fp = f(y);
    y[i] = x[i] - hi;
    const S fm = f(y);
    y[i] = x[i];
    hess(i, i) = (fp - 2 * f0 + fm) / (hi * hi);
    for (int j = i + 1; j < n; ++j) {
      const S hj = fd_step(x[j], h0);
      y[i] = x[i] + hi;
      y[j] = x[j] + hj;
      const S fpp = f(y);
      y[j] = x[j] - hj;
      const S fpm = f(y);
      y[i] = x[i] - hi;
      const S fmm = f(y);
      y[j] = x[j] + hj;
      const S fmp = f(y);
      y[i] = x[i];
      y[j] = x[j];
      hess(i, j) = (fpp - fpm - fmp + fmm) / (4 * hi * hj);
      hess(j, i) = hess(i, j);
    }
  }
  return hess;
}

}  // namespace manekit
