#pragma once

#include <cmath>

#include <manekit/hamiltonian.hpp>
#include <manekit/types.hpp>

namespace manekit {

// X_H = (dH/dp, -dH/dq) in the flat (q, p) ordering.
template <typename S>
VecX<S> hamiltonian_vector_field(const Hamiltonian<S>& h, const VecX<S>& x) {
  const int n = h.base_dim();
  const VecX<S> g = h.gradient(x);
  VecX<S> f(2 * n);
  f.head(n) = g.tail(n);
  f.tail(n) = -g.head(n);
  return f;
}

template <typename S>
VecX<S> hamiltonian_vector_field(const Hamiltonian<S>& h, const PhasePoint<S>& x) {
  return hamiltonian_vector_field(h, x.to_vector());
}

// [[d2H/dp2, dH/dp], [dH/dp^T, 0]], size (d + 2) x (d + 2).
template <typename S>
MatX<S> bordered_fiber_matrix(const Hamiltonian<S>& h, const VecX<S>& x) {
  const int n = h.base_dim();
  const MatX<S> hess = h.hessian(x);
  const VecX<S> dp = h.gradient(x).tail(n);
  MatX<S> b = MatX<S>::Zero(n + 1, n + 1);
  b.topLeftCorner(n, n) = hess.bottomRightCorner(n, n);
  b.topRightCorner(n, 1) = dp;
  b.bottomLeftCorner(1, n) = dp.transpose();
  return b;
}

template <typename S>
struct FiberwiseTestRecord {
  S det_value = S(0);
  S threshold = S(0);
  bool non_degenerate = false;
};

// Non-degeneracy of the fiber Hessian restricted to the iso-energetic
// directions, decided through the bordered determinant.  A non-positive tol
// selects the default threshold 1e-8 * (1 + |d2H/dp2|^d).
template <typename S>
FiberwiseTestRecord<S> fiberwise_iso_energetic_test(const Hamiltonian<S>& h,
                                                    const VecX<S>& x, S tol = S(-1)) {
  const int n = h.base_dim();
  const MatX<S> b = bordered_fiber_matrix(h, x);
  FiberwiseTestRecord<S> rec;
  rec.det_value = b.determinant();
  if (tol > S(0)) {
    rec.threshold = tol;
  } else {
    const S fiber_norm = b.topLeftCorner(n, n).cwiseAbs().maxCoeff();
    rec.threshold = S(1e-8) * (S(1) + std::pow(fiber_norm, S(n - 1)));
  }
  rec.non_degenerate = std::abs(rec.det_value) > rec.threshold;
  return rec;
}

template <typename S>
FiberwiseTestRecord<S> fiberwise_iso_energetic_test(const Hamiltonian<S>& h,
                                                    const PhasePoint<S>& x,
                                                    S tol = S(-1)) {
  return fiberwise_iso_energetic_test(h, x.to_vector(), tol);
}

// True when H(q, -p) = H(q, p) at every sample within tol * (1 + |H|).
template <typename S>
bool reversibility_check(const Hamiltonian<S>& h, const std::vector<VecX<S>>& samples,
                         S tol = S(1e-10)) {
  const int n = h.base_dim();
  for (const VecX<S>& x : samples) {
    VecX<S> flipped = x;
    flipped.tail(n) = -x.tail(n);
    const S a = h.value(x);
    const S b = h.value(flipped);
    if (std::abs(a - b) > tol * (S(1) + std::abs(a))) return false;
  }
  return true;
}

}  // namespace manekit
