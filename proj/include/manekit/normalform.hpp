#pragma once

// Chart construction along a regular orbit segment.  The composed chart turns
// the model into p1 + (1/2) phat^T D phat plus terms vanishing to second
// order on the axis, with D a fixed diagonal sign matrix.  Each step below
// contributes one or two elementary pieces and is usable on its own.

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include <manekit/chart.hpp>
#include <manekit/cheb.hpp>
#include <manekit/errors.hpp>
#include <manekit/finite_diff.hpp>
#include <manekit/flow.hpp>
#include <manekit/geometry.hpp>
#include <manekit/hamiltonian.hpp>
#include <manekit/ode.hpp>
#include <manekit/types.hpp>

namespace manekit {

namespace detail {

// Curves are fitted on a slightly wider interval than the requested tube so
// later stages can differentiate across the tube boundary; the pieces accept
// axis coordinates up to a still wider guard to leave room for the outermost
// finite-difference probes.
constexpr int curve_node_count = 25;

template <typename S>
S fit_half_width(S delta) {
  return S(1.05) * delta;
}

template <typename S>
S guard_half_width(S delta) {
  return S(1.06) * delta + S(1e-3);
}

template <typename S>
void check_axis_coord(S q1, S limit, const char* where) {
  if (!(std::abs(q1) <= limit)) {
    std::ostringstream os;
    os << where << ": axis coordinate " << q1 << " leaves the tube (limit " << limit
       << ")";
    throw ConstructionFailure(os.str());
  }
}

template <typename S>
VecX<S> axis_point(S t, int n) {
  VecX<S> x = VecX<S>::Zero(2 * n);
  x[0] = t;
  return x;
}

template <typename S>
OdeOptions<S> tight_ode_options() {
  OdeOptions<S> opt;
  opt.rel_tol = S(1e-12);
  opt.abs_tol = S(1e-14);
  return opt;
}

template <typename S>
FlowConfig<S> tight_flow_config() {
  FlowConfig<S> cfg;
  cfg.rel_tol = S(1e-12);
  cfg.abs_tol = S(1e-14);
  return cfg;
}

template <typename S>
MatX<S> unflatten(const VecX<S>& v, int offset, int rows, int cols) {
  MatX<S> m(rows, cols);
  for (int j = 0, k = offset; j < cols; ++j)
    for (int i = 0; i < rows; ++i, ++k) m(i, j) = v[k];
  return m;
}

template <typename S>
void flatten_into(const MatX<S>& m, VecX<S>& v, int offset) {
  for (int j = 0, k = offset; j < m.cols(); ++j)
    for (int i = 0; i < m.rows(); ++i, ++k) v[k] = m(i, j);
}

// States of the phase flow through x0 at the given ascending times, one
// integration per time direction.
template <typename S>
std::vector<VecX<S>> sample_flow_states(const Hamiltonian<S>& h, const VecX<S>& x0,
                                        const std::vector<S>& ts) {
  S lo = S(0), hi = S(0);
  for (S t : ts) {
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  const FlowConfig<S> cfg = tight_flow_config<S>();
  std::optional<Trajectory<S>> fwd, bwd;
  if (hi > S(0)) fwd = integrate_flow(h, x0, {S(0), hi}, cfg);
  if (lo < S(0)) bwd = integrate_flow(h, x0, {S(0), lo}, cfg);
  std::vector<VecX<S>> out;
  out.reserve(ts.size());
  for (S t : ts) {
    if (t > S(0))
      out.push_back(fwd->state(t));
    else if (t < S(0))
      out.push_back(bwd->state(t));
    else
      out.push_back(x0);
  }
  return out;
}

template <typename S>
HomogeneousPiece<S> identity_piece(int n) {
  HomogeneousPiece<S> piece;
  piece.phi = [](const VecX<S>& q) { return q; };
  piece.dphi = [n](const VecX<S>&) { return MatX<S>(MatX<S>::Identity(n, n)); };
  piece.dphi_dir = [n](const VecX<S>&, const VecX<S>&) {
    return MatX<S>(MatX<S>::Zero(n, n));
  };
  piece.phi_inv = [](const VecX<S>& q) { return q; };
  return piece;
}

template <typename S>
VerticalPiece<S> zero_vertical_piece(int n) {
  VerticalPiece<S> piece;
  piece.g = [](const VecX<S>&) { return S(0); };
  piece.dg = [n](const VecX<S>&) { return VecX<S>(VecX<S>::Zero(n)); };
  piece.d2g = [n](const VecX<S>&) { return MatX<S>(MatX<S>::Zero(n, n)); };
  return piece;
}

}  // namespace detail

// Moves the projected orbit through x0 onto the axis: phi(q1, qhat) =
// c(q1) + E qhat with c the base projection of the orbit (parametrized by
// flow time, so c' is the base velocity) and E an orthonormal complement of
// c'(0).
template <typename S>
HomogeneousPiece<S> straighten_projection(const Hamiltonian<S>& h, const VecX<S>& x0,
                                          S delta) {
  const int n = h.base_dim();
  if (x0.size() != 2 * n)
    throw DimensionError("straighten_projection: x0 size does not match phase dim");
  if (!(delta > S(0)))
    throw DimensionError("straighten_projection: delta must be positive");
  const VecX<S> b = h.gradient(x0).tail(n);
  if (b.norm() <= S(1e-10) * (S(1) + x0.cwiseAbs().maxCoeff()))
    throw HypothesisViolation("straighten_projection: base velocity vanishes at x0");

  const S m = detail::fit_half_width(delta);
  const S guard = detail::guard_half_width(delta);
  const auto ts = ChebCurve<S>::nodes(detail::curve_node_count, -m, m);
  const auto states = detail::sample_flow_states(h, x0, ts);
  std::vector<VecX<S>> qs(ts.size()), vs(ts.size());
  for (size_t i = 0; i < ts.size(); ++i) {
    qs[i] = states[i].head(n);
    vs[i] = h.gradient(states[i]).tail(n);
  }
  const auto c_curve = ChebCurveVec<S>::from_values(qs, -m, m);
  const auto cp_curve = ChebCurveVec<S>::from_values(vs, -m, m);
  const auto cpp_curve = cp_curve.derivative();

  MatX<S> e_mat;
  {
    Eigen::HouseholderQR<MatX<S>> qr{MatX<S>(b)};
    const MatX<S> q_full = qr.householderQ() * MatX<S>::Identity(n, n);
    e_mat = q_full.rightCols(n - 1);
  }
  const VecX<S> beta = b / b.squaredNorm();
  const VecX<S> q0 = x0.head(n);

  HomogeneousPiece<S> piece;
  piece.phi = [c_curve, e_mat, guard, n](const VecX<S>& q) {
    detail::check_axis_coord(q[0], guard, "straighten_projection");
    return VecX<S>(c_curve(q[0]) + e_mat * q.tail(n - 1));
  };
  piece.dphi = [cp_curve, e_mat, guard, n](const VecX<S>& q) {
    detail::check_axis_coord(q[0], guard, "straighten_projection");
    MatX<S> d(n, n);
    d.col(0) = cp_curve(q[0]);
    d.rightCols(n - 1) = e_mat;
    return d;
  };
  piece.dphi_dir = [cpp_curve, guard, n](const VecX<S>& q, const VecX<S>& v) {
    detail::check_axis_coord(q[0], guard, "straighten_projection");
    MatX<S> d = MatX<S>::Zero(n, n);
    d.col(0) = v[0] * cpp_curve(q[0]);
    return d;
  };
  piece.phi_inv = [c_curve, cp_curve, e_mat, beta, q0, guard, n](const VecX<S>& qa) {
    // The axis coordinate solves beta . (c(t) - qa) = 0; beta is orthogonal
    // to the transverse frame, so the equation is scalar.
    S t = std::clamp(beta.dot(qa - q0), -guard, guard);
    bool converged = false;
    for (int it = 0; it < 60; ++it) {
      const S f = beta.dot(VecX<S>(c_curve(t) - qa));
      const S fp = beta.dot(cp_curve(t));
      if (std::abs(fp) < S(1e-14)) break;
      const S step = f / fp;
      t = std::clamp(t - step, -guard, guard);
      if (std::abs(step) <= S(1e-13) * (S(1) + std::abs(t))) {
        converged = true;
        break;
      }
    }
    if (!converged)
      throw ConstructionFailure(
          "straighten_projection: inverse iteration did not converge");
    const VecX<S> c_t = c_curve(t);
    VecX<S> q(n);
    q[0] = t;
    q.tail(n - 1) = e_mat.transpose() * (qa - c_t);
    const S resid = (c_t + e_mat * q.tail(n - 1) - qa).cwiseAbs().maxCoeff();
    if (resid > S(1e-9) * (S(1) + qa.cwiseAbs().maxCoeff()))
      throw ConstructionFailure(
          "straighten_projection: point is too far from the orbit tube");
    return q;
  };
  return piece;
}

// Removes the momentum along the axis orbit: samples P(t) from the flow
// through (0, p0), sets u(q1, qhat) = v(q1) + w(q1) . qhat with v' = P1 and
// w = Phat, and returns the vertical piece generated by -u, i.e. the piece
// whose inverse shifts the orbit momentum to zero.  The piece itself maps
// model momenta back to the ambient ones: p -> p + du.
template <typename S>
VerticalPiece<S> vertical_normalization(const Hamiltonian<S>& h, const VecX<S>& p0,
                                        S delta) {
  const int n = h.base_dim();
  const int d = n - 1;
  if (p0.size() != n)
    throw DimensionError("vertical_normalization: p0 size does not match base dim");
  if (!(delta > S(0)))
    throw DimensionError("vertical_normalization: delta must be positive");

  const S m = detail::fit_half_width(delta);
  const S guard = detail::guard_half_width(delta);
  const auto ts = ChebCurve<S>::nodes(detail::curve_node_count, -m, m);
  VecX<S> x_start(2 * n);
  x_start << VecX<S>::Zero(n), p0;
  const auto states = detail::sample_flow_states(h, x_start, ts);
  std::vector<S> p1s(ts.size());
  std::vector<VecX<S>> phats(ts.size());
  for (size_t i = 0; i < ts.size(); ++i) {
    p1s[i] = states[i][n];
    if (d > 0) phats[i] = states[i].tail(d);
  }
  const auto vp_curve = ChebCurve<S>::from_values(p1s, -m, m);
  const auto vpp_curve = vp_curve.derivative();
  const auto v_curve = vp_curve.antiderivative();
  const S v_at_zero = v_curve(S(0));
  ChebCurveVec<S> w_curve, wp_curve, wpp_curve;
  if (d > 0) {
    w_curve = ChebCurveVec<S>::from_values(phats, -m, m);
    wp_curve = w_curve.derivative();
    wpp_curve = wp_curve.derivative();
  }

  VerticalPiece<S> piece;
  piece.g = [v_curve, v_at_zero, w_curve, guard, d](const VecX<S>& q) {
    detail::check_axis_coord(q[0], guard, "vertical_normalization");
    S out = v_curve(q[0]) - v_at_zero;
    if (d > 0) out += w_curve(q[0]).dot(q.tail(d));
    return out;
  };
  piece.dg = [vp_curve, w_curve, wp_curve, guard, n, d](const VecX<S>& q) {
    detail::check_axis_coord(q[0], guard, "vertical_normalization");
    VecX<S> out(n);
    out[0] = vp_curve(q[0]);
    if (d > 0) {
      out[0] += wp_curve(q[0]).dot(q.tail(d));
      out.tail(d) = w_curve(q[0]);
    }
    return out;
  };
  piece.d2g = [vpp_curve, wp_curve, wpp_curve, guard, n, d](const VecX<S>& q) {
    detail::check_axis_coord(q[0], guard, "vertical_normalization");
    MatX<S> out = MatX<S>::Zero(n, n);
    out(0, 0) = vpp_curve(q[0]);
    if (d > 0) {
      out(0, 0) += wpp_curve(q[0]).dot(q.tail(d));
      const VecX<S> wp = wp_curve(q[0]);
      out.block(0, 1, 1, d) = wp.transpose();
      out.block(1, 0, d, 1) = wp;
    }
    return out;
  };
  return piece;
}

// Straightens the base velocity field V(q) = dH/dp (q, 0) to the first
// coordinate direction.  The diffeo is the field's flow map from the
// transverse slice, phi(q1, qhat) = (flow of V for time q1 from (0, qhat)),
// realized as the tangent model c0(q1) + C1(q1) qhat built from one
// variational integration per time direction.  The model matches the flow
// map exactly along the axis and to first order in the slice offset (for a
// field linear in q it is the flow map), which is the order the axis Hessian
// conditions see; evaluation then needs no integration at all.
template <typename S>
HomogeneousPiece<S> flowbox_normalization(const Hamiltonian<S>& h, S delta) {
  const int n = h.base_dim();
  const int d = n - 1;
  if (!(delta > S(0)))
    throw DimensionError("flowbox_normalization: delta must be positive");
  const S m = detail::fit_half_width(delta);
  const S guard = detail::guard_half_width(delta);

  auto vfield = [h, n](const VecX<S>& q) {
    VecX<S> x(2 * n);
    x << q, VecX<S>::Zero(n);
    return VecX<S>(h.gradient(x).tail(n));
  };
  if (vfield(VecX<S>::Zero(n)).cwiseAbs().maxCoeff() <= S(1e-10))
    throw ConstructionFailure(
        "flowbox_normalization: the base field vanishes at the segment center");

  const auto rhs = [vfield, n](S, const VecX<S>& z) {
    const VecX<S> y = z.head(n);
    const MatX<S> var = detail::unflatten(z, n, n, n);
    const MatX<S> dv = fd_jacobian(vfield, y, S(1e-6));
    VecX<S> out(n + n * n);
    out.head(n) = vfield(y);
    detail::flatten_into(MatX<S>(dv * var), out, n);
    return out;
  };
  VecX<S> z0(n + n * n);
  z0.head(n) = VecX<S>::Zero(n);
  detail::flatten_into(MatX<S>(MatX<S>::Identity(n, n)), z0, n);
  const auto opt = detail::tight_ode_options<S>();
  const auto fwd = dopri5(rhs, z0, S(0), m, opt, true);
  const auto bwd = dopri5(rhs, z0, S(0), -m, opt, true);

  const auto ts = ChebCurve<S>::nodes(detail::curve_node_count, -m, m);
  std::vector<VecX<S>> c0_vals(ts.size());
  std::vector<MatX<S>> c1_vals(ts.size());
  for (size_t i = 0; i < ts.size(); ++i) {
    const VecX<S> z = ts[i] >= S(0) ? fwd.eval(ts[i]) : bwd.eval(ts[i]);
    c0_vals[i] = z.head(n);
    c1_vals[i] = detail::unflatten(z, n, n, n).rightCols(d);
  }
  const auto c0_curve = ChebCurveVec<S>::from_values(c0_vals, -m, m);
  const auto c0p_curve = c0_curve.derivative();
  const auto c0pp_curve = c0p_curve.derivative();
  const auto c1_curve = ChebCurveMat<S>::from_values(c1_vals, -m, m);
  const auto c1p_curve = c1_curve.derivative();
  const auto c1pp_curve = c1p_curve.derivative();

  HomogeneousPiece<S> piece;
  piece.phi = [c0_curve, c1_curve, guard, d](const VecX<S>& q) {
    detail::check_axis_coord(q[0], guard, "flowbox_normalization");
    return VecX<S>(c0_curve(q[0]) + c1_curve(q[0]) * q.tail(d));
  };
  piece.dphi = [c0p_curve, c1_curve, c1p_curve, guard, n, d](const VecX<S>& q) {
    detail::check_axis_coord(q[0], guard, "flowbox_normalization");
    MatX<S> out(n, n);
    out.col(0) = c0p_curve(q[0]) + c1p_curve(q[0]) * q.tail(d);
    out.rightCols(d) = c1_curve(q[0]);
    return out;
  };
  piece.dphi_dir = [c0pp_curve, c1p_curve, c1pp_curve, guard, n, d](
                       const VecX<S>& q, const VecX<S>& v) {
    detail::check_axis_coord(q[0], guard, "flowbox_normalization");
    MatX<S> out(n, n);
    out.col(0) = v[0] * (c0pp_curve(q[0]) + c1pp_curve(q[0]) * q.tail(d)) +
                 c1p_curve(q[0]) * v.tail(d);
    out.rightCols(d) = v[0] * c1p_curve(q[0]);
    return out;
  };
  piece.phi_inv = [c0_curve, c0p_curve, c1_curve, c1p_curve, guard, n,
                   d](const VecX<S>& qa) {
    // Newton on the full map; the Jacobian is the piece's own dphi.
    VecX<S> q(n);
    q[0] = std::clamp(qa[0], -guard, guard);
    q.tail(d) = qa.tail(d);
    bool converged = false;
    for (int it = 0; it < 50; ++it) {
      const VecX<S> resid = c0_curve(q[0]) + c1_curve(q[0]) * q.tail(d) - qa;
      MatX<S> jac(n, n);
      jac.col(0) = c0p_curve(q[0]) + c1p_curve(q[0]) * q.tail(d);
      jac.rightCols(d) = c1_curve(q[0]);
      const VecX<S> step = jac.partialPivLu().solve(resid);
      q[0] = std::clamp(q[0] - step[0], -guard, guard);
      q.tail(d) -= step.tail(d);
      if (step.cwiseAbs().maxCoeff() <=
          S(1e-13) * (S(1) + q.cwiseAbs().maxCoeff())) {
        converged = true;
        break;
      }
    }
    const S resid = (c0_curve(q[0]) + c1_curve(q[0]) * q.tail(d) - qa)
                        .cwiseAbs()
                        .maxCoeff();
    if (!converged || resid > S(1e-9) * (S(1) + qa.cwiseAbs().maxCoeff()))
      throw ConstructionFailure(
          "flowbox_normalization: the point lies outside the flow tube");
    return q;
  };
  return piece;
}

// Kills the mixed p1-phat coupling with the base shear phi(q1, qhat) =
// (q1 + l(q1) . qhat, qhat), l = (transverse fiber block)^{-1} (mixed block).
template <typename S>
HomogeneousPiece<S> shear_normalization(const Hamiltonian<S>& h, S delta) {
  const int n = h.base_dim();
  const int d = n - 1;
  if (!(delta > S(0)))
    throw DimensionError("shear_normalization: delta must be positive");
  if (d == 0) return detail::identity_piece<S>(n);

  const S m = detail::fit_half_width(delta);
  const S guard = detail::guard_half_width(delta);
  const auto ts = ChebCurve<S>::nodes(detail::curve_node_count, -m, m);
  std::vector<VecX<S>> ls;
  ls.reserve(ts.size());
  for (S t : ts) {
    const MatX<S> hh = h.hessian(detail::axis_point(t, n));
    const MatX<S> ahat = hh.block(n + 1, n + 1, d, d);
    const VecX<S> bvec = hh.block(n, n + 1, 1, d).transpose();
    const auto lu = ahat.partialPivLu();
    const S scale = std::pow(S(1) + ahat.cwiseAbs().maxCoeff(), S(d));
    if (std::abs(lu.determinant()) <= S(1e-10) * scale) {
      std::ostringstream os;
      os << "shear_normalization: transverse fiber block is singular at t = " << t;
      throw HypothesisViolation(os.str());
    }
    ls.push_back(lu.solve(bvec));
  }
  const auto l_curve = ChebCurveVec<S>::from_values(ls, -m, m);
  const auto lp_curve = l_curve.derivative();
  const auto lpp_curve = lp_curve.derivative();

  HomogeneousPiece<S> piece;
  piece.phi = [l_curve, guard, d](const VecX<S>& q) {
    detail::check_axis_coord(q[0], guard, "shear_normalization");
    VecX<S> out = q;
    out[0] += l_curve(q[0]).dot(q.tail(d));
    return out;
  };
  piece.dphi = [l_curve, lp_curve, guard, n, d](const VecX<S>& q) {
    detail::check_axis_coord(q[0], guard, "shear_normalization");
    MatX<S> out = MatX<S>::Identity(n, n);
    out(0, 0) = S(1) + lp_curve(q[0]).dot(q.tail(d));
    out.block(0, 1, 1, d) = l_curve(q[0]).transpose();
    return out;
  };
  piece.dphi_dir = [lp_curve, lpp_curve, guard, n, d](const VecX<S>& q,
                                                      const VecX<S>& v) {
    detail::check_axis_coord(q[0], guard, "shear_normalization");
    MatX<S> out = MatX<S>::Zero(n, n);
    out(0, 0) = v[0] * lpp_curve(q[0]).dot(q.tail(d)) + lp_curve(q[0]).dot(v.tail(d));
    out.block(0, 1, 1, d) = v[0] * lp_curve(q[0]).transpose();
    return out;
  };
  piece.phi_inv = [l_curve, lp_curve, guard, d](const VecX<S>& qa) {
    const VecX<S> qhat = qa.tail(d);
    S t = std::clamp(qa[0], -guard, guard);
    bool converged = false;
    for (int it = 0; it < 60; ++it) {
      const S f = t + l_curve(t).dot(qhat) - qa[0];
      const S fp = S(1) + lp_curve(t).dot(qhat);
      if (std::abs(fp) < S(1e-10)) break;
      const S step = f / fp;
      t = std::clamp(t - step, -guard, guard);
      if (std::abs(step) <= S(1e-13) * (S(1) + std::abs(t))) {
        converged = true;
        break;
      }
    }
    if (!converged)
      throw ConstructionFailure("shear_normalization: inverse iteration stalled");
    VecX<S> out = qa;
    out[0] = t;
    return out;
  };
  return piece;
}

// Output of the fiber diagonalization step: a base stretch q -> (q1, M qhat)
// followed by a vertical tilt with generator qhat . B qhat / 2, plus the sign
// matrix diagonal, the two solution curves, and the fitted block A(t) they
// factor as A = M D M^T.
template <typename S>
struct FiberDiagonalization {
  HomogeneousPiece<S> stretch;
  VerticalPiece<S> tilt;
  VecX<S> d_signs;
  ChebCurveMat<S> m_curve;
  ChebCurveMat<S> b_curve;
  ChebCurveMat<S> a_curve;
};

// Factors the transverse fiber block as A(t) = M(t) D M(t)^T with constant
// sign matrix D, via the matrix transport M' = A' M^{-T} D / 2 seeded by the
// symmetric eigendecomposition at t = 0.
template <typename S>
FiberDiagonalization<S> diagonalize_vertical_hessian(const Hamiltonian<S>& h, S delta) {
  const int n = h.base_dim();
  const int d = n - 1;
  if (!(delta > S(0)))
    throw DimensionError("diagonalize_vertical_hessian: delta must be positive");
  FiberDiagonalization<S> out;
  if (d == 0) {
    out.stretch = detail::identity_piece<S>(n);
    out.tilt = detail::zero_vertical_piece<S>(n);
    out.d_signs = VecX<S>();
    return out;
  }

  const S m = detail::fit_half_width(delta);
  const S guard = detail::guard_half_width(delta);
  const auto ts = ChebCurve<S>::nodes(detail::curve_node_count, -m, m);
  std::vector<MatX<S>> a_vals;
  a_vals.reserve(ts.size());
  for (S t : ts)
    a_vals.push_back(h.hessian(detail::axis_point(t, n)).block(n + 1, n + 1, d, d));
  const auto a_fit = ChebCurveMat<S>::from_values(a_vals, -m, m);
  const auto ap_fit = a_fit.derivative();

  for (size_t i = 0; i < ts.size(); ++i) {
    const S scale = std::pow(S(1) + a_vals[i].cwiseAbs().maxCoeff(), S(d));
    if (std::abs(a_vals[i].determinant()) <= S(1e-10) * scale) {
      std::ostringstream os;
      os << "diagonalize_vertical_hessian: fiber block loses invertibility at t = "
         << ts[i];
      throw HypothesisViolation(os.str());
    }
  }

  // Signature frame at the segment center, positive directions first; the
  // eigenvector signs are fixed so the construction is reproducible.
  MatX<S> m0(d, d);
  VecX<S> signs(d);
  {
    Eigen::SelfAdjointEigenSolver<MatX<S>> es(a_fit(S(0)));
    if (es.info() != Eigen::Success)
      throw NumericalFailure("diagonalize_vertical_hessian: eigensolver failed");
    std::vector<int> order(d);
    for (int i = 0; i < d; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return es.eigenvalues()[a] > es.eigenvalues()[b];
    });
    for (int i = 0; i < d; ++i) {
      const S lam = es.eigenvalues()[order[i]];
      VecX<S> v = es.eigenvectors().col(order[i]);
      int big = 0;
      for (int j = 1; j < d; ++j)
        if (std::abs(v[j]) > std::abs(v[big])) big = j;
      if (v[big] < S(0)) v = -v;
      signs[i] = lam >= S(0) ? S(1) : S(-1);
      m0.col(i) = v * std::sqrt(std::abs(lam));
    }
  }
  const MatX<S> dmat = signs.asDiagonal();

  const auto rhs = [&ap_fit, &dmat, d](S t, const VecX<S>& z) {
    const MatX<S> mm = detail::unflatten(z, 0, d, d);
    const MatX<S> y = mm.transpose().partialPivLu().solve(dmat);
    VecX<S> out(d * d);
    detail::flatten_into(MatX<S>(S(0.5) * (ap_fit(t) * y)), out, 0);
    return out;
  };
  VecX<S> z0(d * d);
  detail::flatten_into(m0, z0, 0);
  const auto opt = detail::tight_ode_options<S>();
  const auto fwd = dopri5(rhs, z0, S(0), m, opt, true);
  const auto bwd = dopri5(rhs, z0, S(0), -m, opt, true);

  std::vector<MatX<S>> m_vals, mp_vals, b_vals;
  m_vals.reserve(ts.size());
  mp_vals.reserve(ts.size());
  b_vals.reserve(ts.size());
  for (S t : ts) {
    const VecX<S> z = t >= S(0) ? fwd.eval(t) : bwd.eval(t);
    const MatX<S> mm = detail::unflatten(z, 0, d, d);
    const MatX<S> mp = detail::unflatten(rhs(t, z), 0, d, d);
    m_vals.push_back(mm);
    mp_vals.push_back(mp);
    b_vals.push_back(dmat * mm.partialPivLu().solve(mp));
  }
  out.d_signs = signs;
  out.m_curve = ChebCurveMat<S>::from_values(m_vals, -m, m);
  out.b_curve = ChebCurveMat<S>::from_values(b_vals, -m, m);
  out.a_curve = a_fit;
  const auto dm_curve = ChebCurveMat<S>::from_values(mp_vals, -m, m);
  const auto d2m_curve = dm_curve.derivative();
  const auto m_curve = out.m_curve;
  const auto b_curve = out.b_curve;
  const auto bp_curve = b_curve.derivative();
  const auto bpp_curve = bp_curve.derivative();

  out.stretch.phi = [m_curve, guard, n, d](const VecX<S>& q) {
    detail::check_axis_coord(q[0], guard, "diagonalize_vertical_hessian");
    VecX<S> out_q(n);
    out_q[0] = q[0];
    out_q.tail(d) = m_curve(q[0]) * q.tail(d);
    return out_q;
  };
  out.stretch.dphi = [m_curve, dm_curve, guard, n, d](const VecX<S>& q) {
    detail::check_axis_coord(q[0], guard, "diagonalize_vertical_hessian");
    MatX<S> out_m = MatX<S>::Zero(n, n);
    out_m(0, 0) = S(1);
    out_m.block(1, 0, d, 1) = dm_curve(q[0]) * q.tail(d);
    out_m.block(1, 1, d, d) = m_curve(q[0]);
    return out_m;
  };
  out.stretch.dphi_dir = [dm_curve, d2m_curve, guard, n, d](const VecX<S>& q,
                                                            const VecX<S>& v) {
    detail::check_axis_coord(q[0], guard, "diagonalize_vertical_hessian");
    MatX<S> out_m = MatX<S>::Zero(n, n);
    out_m.block(1, 0, d, 1) =
        v[0] * (d2m_curve(q[0]) * q.tail(d)) + dm_curve(q[0]) * v.tail(d);
    out_m.block(1, 1, d, d) = v[0] * dm_curve(q[0]);
    return out_m;
  };
  out.stretch.phi_inv = [m_curve, guard, n, d](const VecX<S>& qa) {
    detail::check_axis_coord(qa[0], guard, "diagonalize_vertical_hessian");
    VecX<S> q(n);
    q[0] = qa[0];
    q.tail(d) = m_curve(qa[0]).partialPivLu().solve(VecX<S>(qa.tail(d)));
    return q;
  };

  out.tilt.g = [b_curve, guard, d](const VecX<S>& q) {
    detail::check_axis_coord(q[0], guard, "diagonalize_vertical_hessian");
    const VecX<S> qhat = q.tail(d);
    return S(0.5) * qhat.dot(b_curve(q[0]) * qhat);
  };
  out.tilt.dg = [b_curve, bp_curve, guard, n, d](const VecX<S>& q) {
    detail::check_axis_coord(q[0], guard, "diagonalize_vertical_hessian");
    const VecX<S> qhat = q.tail(d);
    VecX<S> out_g(n);
    out_g[0] = S(0.5) * qhat.dot(bp_curve(q[0]) * qhat);
    out_g.tail(d) = b_curve(q[0]) * qhat;
    return out_g;
  };
  out.tilt.d2g = [b_curve, bp_curve, bpp_curve, guard, n, d](const VecX<S>& q) {
    detail::check_axis_coord(q[0], guard, "diagonalize_vertical_hessian");
    const VecX<S> qhat = q.tail(d);
    MatX<S> out_g = MatX<S>::Zero(n, n);
    out_g(0, 0) = S(0.5) * qhat.dot(bpp_curve(q[0]) * qhat);
    const VecX<S> bp_q = bp_curve(q[0]) * qhat;
    out_g.block(0, 1, 1, d) = bp_q.transpose();
    out_g.block(1, 0, d, 1) = bp_q;
    out_g.block(1, 1, d, d) = b_curve(q[0]);
    return out_g;
  };
  return out;
}

// Residual report of the normalized-form conditions at sampled axis times.
template <typename S>
struct NormalFormResiduals {
  S orbit = S(0);
  S q_phat = S(0);
  S p1_phat = S(0);
  S fiber_vs_d = S(0);
  S q1_q = S(0);
  int n_samples = 0;
  S tol = S(0);
  bool passed = false;

  S max_residual() const {
    return std::max({orbit, q_phat, p1_phat, fiber_vs_d, q1_q});
  }
};

namespace detail {

template <typename S>
void hessian_residuals(const Hamiltonian<S>& h_chart, const VecX<S>& d_signs,
                       const std::vector<S>& ts, NormalFormResiduals<S>& r) {
  const int n = h_chart.base_dim();
  const int d = n - 1;
  const MatX<S> dmat = d_signs.asDiagonal();
  for (S t : ts) {
    const MatX<S> hh = h_chart.hessian(axis_point(t, n));
    if (d > 0) {
      r.q_phat = std::max(r.q_phat, hh.block(0, n + 1, n, d).cwiseAbs().maxCoeff());
      r.p1_phat =
          std::max(r.p1_phat, hh.block(n, n + 1, 1, d).cwiseAbs().maxCoeff());
      r.fiber_vs_d = std::max(
          r.fiber_vs_d, (hh.block(n + 1, n + 1, d, d) - dmat).cwiseAbs().maxCoeff());
    }
    r.q1_q = std::max(r.q1_q, hh.block(0, 0, 1, n).cwiseAbs().maxCoeff());
  }
}

template <typename S>
std::vector<S> uniform_times(S span, int n_samples) {
  std::vector<S> ts(n_samples);
  for (int i = 0; i < n_samples; ++i)
    ts[i] = -span + 2 * span * S(i) / S(n_samples - 1);
  return ts;
}

// Build-time variant: the orbit residual is measured by pulling the ambient
// orbit back through the chart, which avoids integrating the flow of the
// composed model.
template <typename S>
NormalFormResiduals<S> verify_with_chart(const Hamiltonian<S>& h_ambient,
                                         const VecX<S>& x0,
                                         const Hamiltonian<S>& h_final,
                                         const FiberedChart<S>& chart,
                                         const VecX<S>& d_signs, S delta,
                                         int n_samples, S tol) {
  const int n = h_ambient.base_dim();
  NormalFormResiduals<S> r;
  r.n_samples = n_samples;
  r.tol = tol;
  const S span = S(0.9) * delta;
  const FlowConfig<S> cfg = tight_flow_config<S>();
  const auto fwd = integrate_flow(h_ambient, x0, {S(0), span}, cfg);
  const auto bwd = integrate_flow(h_ambient, x0, {S(0), -span}, cfg);
  const auto ts = uniform_times(span, n_samples);
  for (S t : ts) {
    const VecX<S> model = chart.apply_inverse((t >= S(0) ? fwd : bwd).state(t));
    r.orbit = std::max(r.orbit,
                       (model - axis_point(t, n)).cwiseAbs().maxCoeff());
  }
  hessian_residuals(h_final, d_signs, ts, r);
  r.passed = r.max_residual() <= tol;
  return r;
}

}  // namespace detail

// Diagnostic check of the normalized-form conditions for a model given in
// chart coordinates: flows the model from the phase origin and compares
// against the axis orbit, then scans the Hessian blocks along the axis.
// Reports maxima; never throws for large residuals.
template <typename S>
NormalFormResiduals<S> verify_normal_form(const Hamiltonian<S>& h_chart,
                                          const VecX<S>& d_signs, S delta,
                                          int n_samples = 20, S tol = S(1e-6)) {
  const int n = h_chart.base_dim();
  if (d_signs.size() != n - 1)
    throw DimensionError("verify_normal_form: sign vector must have size base_dim - 1");
  if (n_samples < 2) throw DimensionError("verify_normal_form: need n_samples >= 2");
  if (!(delta > S(0))) throw DimensionError("verify_normal_form: delta must be positive");
  NormalFormResiduals<S> r;
  r.n_samples = n_samples;
  r.tol = tol;
  const S span = S(0.9) * delta;
  const FlowConfig<S> cfg = detail::tight_flow_config<S>();
  const VecX<S> origin = VecX<S>::Zero(2 * n);
  const auto fwd = integrate_flow(h_chart, origin, {S(0), span}, cfg);
  const auto bwd = integrate_flow(h_chart, origin, {S(0), -span}, cfg);
  const auto ts = detail::uniform_times(span, n_samples);
  for (S t : ts) {
    const VecX<S> x_t = (t >= S(0) ? fwd : bwd).state(t);
    r.orbit = std::max(r.orbit,
                       (x_t - detail::axis_point(t, n)).cwiseAbs().maxCoeff());
  }
  detail::hessian_residuals(h_chart, d_signs, ts, r);
  r.passed = r.max_residual() <= tol;
  return r;
}

// Complete normal form around an orbit segment: the chart, the achieved tube
// width, the sign matrix diagonal, and the sampled curves K(t) (transverse
// base block of the normalized Hessian) and a(t) (its p1 curvature).
template <typename S>
struct NormalFormData {
  FiberedChart<S> chart;
  S delta = S(0);
  VecX<S> d_signs;
  ChebCurveMat<S> k_curve;
  ChebCurve<S> a_curve;
  NormalFormResiduals<S> residuals;
  // Diagonalization stage kept whole so callers can audit A = M D M^T and
  // the symmetry of the tilt generator along the solved transport.
  FiberDiagonalization<S> fiber;

  MatX<S> D() const { return MatX<S>(d_signs.asDiagonal()); }
  MatX<S> K(S t) const { return k_curve(t); }
  S a(S t) const { return a_curve(t); }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "normal_form\n";
    os << "delta: " << delta << "\n";
    os << "base_dim: " << d_signs.size() + 1 << "\n";
    os << "D:";
    for (Eigen::Index i = 0; i < d_signs.size(); ++i) os << " " << d_signs[i];
    os << "\n";
    const int samples = 21;
    for (int i = 0; i < samples; ++i) {
      const S t = -delta + 2 * delta * S(i) / S(samples - 1);
      os << "a(" << t << "): " << a_curve(t) << "\n";
    }
    if (d_signs.size() > 0) {
      for (int i = 0; i < samples; ++i) {
        const S t = -delta + 2 * delta * S(i) / S(samples - 1);
        const MatX<S> k = k_curve(t);
        os << "K(" << t << "):";
        for (int r = 0; r < k.rows(); ++r)
          for (int c = 0; c < k.cols(); ++c) os << " " << k(r, c);
        os << "\n";
      }
    }
    os << "residuals: orbit " << residuals.orbit << " q_phat " << residuals.q_phat
       << " p1_phat " << residuals.p1_phat << " fiber_vs_d " << residuals.fiber_vs_d
       << " q1_q " << residuals.q1_q << " passed "
       << (residuals.passed ? "yes" : "no") << "\n";
    return os.str();
  }
};

namespace detail {

template <typename S>
NormalFormData<S> normal_form_attempt(const Hamiltonian<S>& h, const VecX<S>& x0,
                                      S delta) {
  const int n = h.base_dim();
  const int d = n - 1;
  FiberedChart<S> chart(n, delta);
  chart.push(straighten_projection(h, x0, delta));
  const VecX<S> p0 = chart.apply_inverse(x0).tail(n);
  chart.push(vertical_normalization(pull_back(h, chart), p0, delta));
  chart.push(flowbox_normalization(pull_back(h, chart), delta));
  chart.push(shear_normalization(pull_back(h, chart), delta));
  auto diag = diagonalize_vertical_hessian(pull_back(h, chart), delta);
  chart.push(diag.stretch);
  chart.push(diag.tilt);
  const Hamiltonian<S> h_final = pull_back(h, chart);

  NormalFormData<S> nf;
  nf.delta = delta;
  nf.fiber = std::move(diag);
  nf.d_signs = nf.fiber.d_signs;

  const auto ts = ChebCurve<S>::nodes(curve_node_count, -delta, delta);
  std::vector<S> a_vals;
  std::vector<MatX<S>> k_vals;
  a_vals.reserve(ts.size());
  k_vals.reserve(ts.size());
  for (S t : ts) {
    const MatX<S> hh = h_final.hessian(axis_point(t, n));
    a_vals.push_back(hh(n, n));
    if (d > 0) k_vals.push_back(hh.block(1, 1, d, d));
  }
  nf.a_curve = ChebCurve<S>::from_values(a_vals, -delta, delta);
  if (d > 0) nf.k_curve = ChebCurveMat<S>::from_values(k_vals, -delta, delta);

  nf.residuals =
      verify_with_chart(h, x0, h_final, chart, nf.d_signs, delta, 20, S(1e-6));
  if (!nf.residuals.passed) {
    std::ostringstream os;
    os << "normal form residual " << nf.residuals.max_residual()
       << " exceeds 1e-6 at tube width " << delta;
    throw NumericalFailure(os.str());
  }
  nf.chart = std::move(chart);
  return nf;
}

}  // namespace detail

// Runs the full pipeline (straighten, remove momentum, flow box, shear,
// diagonalize), shrinking the tube by halves until every step succeeds and
// the residual report passes.  The anchor point must satisfy the fiberwise
// iso-energetic test and have nonzero base velocity.
template <typename S>
NormalFormData<S> build_normal_form(const Hamiltonian<S>& h, const VecX<S>& x0,
                                    S delta_request) {
  const int n = h.base_dim();
  if (x0.size() != 2 * n)
    throw DimensionError("build_normal_form: x0 size does not match phase dim");
  if (!(delta_request > S(0)))
    throw DimensionError("build_normal_form: delta_request must be positive");
  const auto gate = fiberwise_iso_energetic_test(h, x0);
  if (!gate.non_degenerate)
    throw HypothesisViolation(
        "build_normal_form: the anchor point fails the fiberwise iso-energetic test");
  if (h.gradient(x0).tail(n).cwiseAbs().maxCoeff() <= S(1e-10))
    throw HypothesisViolation(
        "build_normal_form: base velocity vanishes at the anchor point");

  S delta = delta_request;
  std::string last_error = "no attempt made";
  for (int halvings = 0; halvings <= 12; ++halvings) {
    if (delta < S(1e-4) * delta_request) break;
    try {
      return detail::normal_form_attempt(h, x0, delta);
    } catch (const HypothesisViolation& e) {
      last_error = e.what();
    } catch (const NumericalFailure& e) {
      last_error = e.what();
    }
    delta /= 2;
  }
  std::ostringstream os;
  os << "build_normal_form: tube width shrank to " << delta
     << " without success; last failure: " << last_error;
  throw ConstructionFailure(os.str());
}

}  // namespace manekit
