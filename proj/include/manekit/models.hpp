#pragma once

// Small model zoo used across tests and the command-line tool.  Every model
// here carries analytic derivatives and a closed orbit through a known point.

#include <manekit/hamiltonian.hpp>

namespace manekit {

namespace detail {

// Quadratic-in-q potential c0 + q^T A q / 2 with analytic derivatives.
template <typename S>
ScalarField<S> quadratic_potential_field(MatX<S> a, S c0) {
  ScalarField<S> f;
  f.value = [a, c0](const VecX<S>& q) { return c0 + S(0.5) * q.dot(a * q); };
  f.grad = [a](const VecX<S>& q) { return (a * q).eval(); };
  f.hess = [a](const VecX<S>& q) {
    (void)q;
    return a;
  };
  return f;
}

}  // namespace detail

// Convex model on the cylinder: H = |p|^2/2 + q2^2/2.  The orbit through
// (0, 0, 1, 0) runs along the periodic coordinate with unit speed.
inline Hamiltonian<double> make_convex_well() {
  Mat a = Mat::Zero(2, 2);
  a(1, 1) = 1.0;
  return make_natural(Mat(Mat::Identity(2, 2)),
                      detail::quadratic_potential_field<double>(a, 0.0),
                      Domain<double>::cylinder(2));
}

// Indefinite quadratic example: H = (p1^2 - p2^2)/2 + q2^2/2 - 1/2.  At
// (0, 0, 1, 0) the energy is zero and the bordered determinant equals 1.
inline Hamiltonian<double> make_saddle_quadratic_d1() {
  TrigSymMatrixField<double> g;
  g.constant = Mat::Zero(2, 2);
  g.constant(0, 0) = 1.0;
  g.constant(1, 1) = -1.0;
  Mat a = Mat::Zero(2, 2);
  a(1, 1) = 1.0;
  return make_fiberwise_quadratic(g.to_field(),
                                  detail::quadratic_potential_field<double>(a, -0.5),
                                  Domain<double>::cylinder(2));
}

// Two-dimensional fiber with mixed signature: H = (p1^2 + p2^2 - p3^2)/2
// + (q2^2 + q3^2)/2.  Energy 1/2 on the axis orbit through (0,0,0,1,0,0).
inline Hamiltonian<double> make_saddle_quadratic_d2() {
  TrigSymMatrixField<double> g;
  g.constant = Mat::Identity(3, 3);
  g.constant(2, 2) = -1.0;
  Mat a = Mat::Zero(3, 3);
  a(1, 1) = 1.0;
  a(2, 2) = 1.0;
  return make_fiberwise_quadratic(g.to_field(),
                                  detail::quadratic_potential_field<double>(a, 0.0),
                                  Domain<double>::cylinder(3));
}

// Natural mechanical model with a libration orbit: H = |p|^2/2 + q1^2/2
// + 2 q2^2.  The orbit q1 = A sin(t) on {q2 = p2 = 0} has period 2 pi and is
// symmetric under (q, p) -> (q, -p) with time reversal.
inline Hamiltonian<double> make_natural_well() {
  Mat a = Mat::Zero(2, 2);
  a(0, 0) = 1.0;
  a(1, 1) = 4.0;
  return make_natural(Mat(Mat::Identity(2, 2)),
                      detail::quadratic_potential_field<double>(a, 0.0),
                      Domain<double>::euclidean(2));
}

// Planar oscillator, base dimension 1: H = (q^2 + p^2)/2.  Orbits are circles
// traversed at unit angular speed; every orbit time is visited exactly once.
inline Hamiltonian<double> make_harmonic_oscillator() {
  Mat a = Mat::Identity(1, 1);
  return make_natural(Mat(Mat::Identity(1, 1)),
                      detail::quadratic_potential_field<double>(a, 0.0),
                      Domain<double>::euclidean(1));
}

// H = p1 on the cylinder with the requested number of fiber coordinates.
inline Hamiltonian<double> make_momentum_model(int fiber_dim) {
  return make_momentum_linear(Domain<double>::cylinder(fiber_dim + 1));
}

}  // namespace manekit
