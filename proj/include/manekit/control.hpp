#pragma once

// Linear control along a straightened orbit segment.  The transverse
// linearized dynamics is L' = Y(t) L with Y(t) = [[0, D], [-K(t), 0]]; a
// fiber-quadratic perturbation adds a lower-left block B(t).  This header
// holds that system, its iterated bracket family, the commutant membership
// test for the stiffness matrix, least-squares control synthesis, and the
// impulse spanning checks used to steer orbit segments.

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <manekit/bump.hpp>
#include <manekit/cheb.hpp>
#include <manekit/errors.hpp>
#include <manekit/flow.hpp>
#include <manekit/hamiltonian.hpp>
#include <manekit/ode.hpp>
#include <manekit/types.hpp>

namespace manekit {

namespace detail {

// Basis of symmetric d x d matrices: units on the diagonal first, then the
// symmetrized off-diagonal pairs in lexicographic order.  Entries are 1.
template <typename S>
std::vector<MatX<S>> symmetric_basis(int d) {
  std::vector<MatX<S>> out;
  for (int i = 0; i < d; ++i) {
    MatX<S> e = MatX<S>::Zero(d, d);
    e(i, i) = S(1);
    out.push_back(std::move(e));
  }
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      MatX<S> e = MatX<S>::Zero(d, d);
      e(i, j) = e(j, i) = S(1);
      out.push_back(std::move(e));
    }
  return out;
}

template <typename S>
int svd_rank(const VecX<S>& sv, S rel_tol = S(1e-9)) {
  if (sv.size() == 0) return 0;
  const S cut = rel_tol * sv[0];
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] > cut && sv[i] > S(0)) ++rank;
  return rank;
}

template <typename S>
OdeOptions<S> control_ode_options() {
  OdeOptions<S> opt;
  opt.rel_tol = S(1e-12);
  opt.abs_tol = S(1e-14);
  return opt;
}

}  // namespace detail

// Data of the free transverse system on one segment: the fiber signature D
// and the stiffness curve K on [0, delta].
template <typename S>
struct ControlData {
  int d = 0;
  VecX<S> d_signs;
  S delta = S(0);
  ChebCurveMat<S> k_curve;
  ChebCurveMat<S> kp_curve;

  MatX<S> D() const { return MatX<S>(d_signs.asDiagonal()); }
  MatX<S> K(S t) const { return k_curve(t); }
  MatX<S> K_prime(S t) const { return kp_curve(t); }

  MatX<S> Y(S t) const {
    MatX<S> y = MatX<S>::Zero(2 * d, 2 * d);
    y.topRightCorner(d, d) = D();
    y.bottomLeftCorner(d, d) = -K(t);
    return y;
  }

  static ControlData from_curve(VecX<S> signs, ChebCurveMat<S> k, S delta) {
    if (!(delta > S(0))) throw DimensionError("ControlData: delta must be positive");
    ControlData cd;
    cd.d = static_cast<int>(signs.size());
    if (cd.d < 1) throw DimensionError("ControlData: fiber dimension must be positive");
    for (int i = 0; i < cd.d; ++i)
      if (std::abs(std::abs(signs[i]) - S(1)) > S(1e-12))
        throw DimensionError("ControlData: signature entries must be +1 or -1");
    cd.d_signs = std::move(signs);
    cd.delta = delta;
    for (int s = 0; s <= 4; ++s) {
      const MatX<S> kk = k(delta * S(s) / S(4));
      if (kk.rows() != cd.d || kk.cols() != cd.d)
        throw DimensionError("ControlData: stiffness curve size does not match the signature");
      if ((kk - kk.transpose()).cwiseAbs().maxCoeff() >
          S(1e-9) * (S(1) + kk.cwiseAbs().maxCoeff()))
        throw DimensionError("ControlData: stiffness curve is not symmetric");
    }
    cd.kp_curve = k.derivative();
    cd.k_curve = std::move(k);
    return cd;
  }

  static ControlData from_constant(const VecX<S>& signs, const MatX<S>& k0, S delta) {
    return from_linear(signs, k0, MatX<S>::Zero(k0.rows(), k0.cols()), delta);
  }

  static ControlData from_linear(const VecX<S>& signs, const MatX<S>& k0, const MatX<S>& k1,
                                 S delta) {
    if (!(delta > S(0))) throw DimensionError("ControlData: delta must be positive");
    std::vector<MatX<S>> vals;
    for (S t : ChebCurve<S>::nodes(8, S(0), delta)) vals.push_back(k0 + t * k1);
    return from_curve(VecX<S>(signs), ChebCurveMat<S>::from_values(vals, S(0), delta), delta);
  }
};

// Symmetric-matrix control curve spanned by bump profiles at fixed centers
// inside (0, delta) times the symmetric basis.  Coefficients are the only
// state; the curve vanishes outside its window by construction.
template <typename S>
struct ControlCurve {
  int d = 0;
  S delta = S(0);
  MatX<S> coeffs;  // centers x d(d+1)/2

  static ControlCurve make(int d, S delta, int centers = 8) {
    if (d < 1 || centers < 1 || !(delta > S(0)))
      throw DimensionError("ControlCurve: invalid shape");
    ControlCurve c;
    c.d = d;
    c.delta = delta;
    c.coeffs = MatX<S>::Zero(centers, d * (d + 1) / 2);
    return c;
  }

  int centers() const { return static_cast<int>(coeffs.rows()); }
  bool is_zero() const {
    return coeffs.size() == 0 || coeffs.cwiseAbs().maxCoeff() == S(0);
  }

  ControlCurve scaled(S a) const {
    ControlCurve c = *this;
    c.coeffs *= a;
    return c;
  }

  // Bump m covers (c_m - 0.9 h, c_m + 0.9 h), c_m = (m+1) h, h = delta/(centers+1);
  // the margins keep every support strictly inside (0, delta).
  S profile(int m, S t) const {
    const S h = delta / S(centers() + 1);
    const S lo = S(m + 1) * h - S(0.9) * h;
    return poly_bump((t - lo) / (S(1.8) * h));
  }

  S profile_d1(int m, S t) const {
    const S h = delta / S(centers() + 1);
    const S lo = S(m + 1) * h - S(0.9) * h;
    return poly_bump_d1((t - lo) / (S(1.8) * h)) / (S(1.8) * h);
  }

  S profile_d2(int m, S t) const {
    const S h = delta / S(centers() + 1);
    const S lo = S(m + 1) * h - S(0.9) * h;
    const S w = S(1.8) * h;
    return poly_bump_d2((t - lo) / w) / (w * w);
  }

  MatX<S> value(S t) const { return assemble(t, &ControlCurve::profile); }
  MatX<S> value_d1(S t) const { return assemble(t, &ControlCurve::profile_d1); }
  MatX<S> value_d2(S t) const { return assemble(t, &ControlCurve::profile_d2); }

 private:
  MatX<S> assemble(S t, S (ControlCurve::*prof)(int, S) const) const {
    MatX<S> b = MatX<S>::Zero(d, d);
    if (coeffs.size() == 0) return b;
    if (t <= S(0) || t >= delta) return b;
    int idx = 0;
    for (int i = 0; i < d; ++i, ++idx) {
      S acc = S(0);
      for (int m = 0; m < centers(); ++m) acc += coeffs(m, idx) * (this->*prof)(m, t);
      b(i, i) = acc;
    }
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j, ++idx) {
        S acc = S(0);
        for (int m = 0; m < centers(); ++m) acc += coeffs(m, idx) * (this->*prof)(m, t);
        b(i, j) = b(j, i) = acc;
      }
    return b;
  }
};

// Endpoint of L' = Y(t) L + [[0,0],[B(t),0]] L, L(0) = I.
template <typename S>
SympMatrix<S> transition_ode_solve(const ControlData<S>& cd, const ControlCurve<S>& b, S t_end,
                                   const OdeOptions<S>& opt = detail::control_ode_options<S>()) {
  if (!(t_end > S(0)) || t_end > cd.delta * (S(1) + S(1e-12)))
    throw DimensionError("transition_ode_solve: t_end must lie in (0, delta]");
  if (b.coeffs.size() != 0 && b.d != cd.d)
    throw DimensionError("transition_ode_solve: control dimension mismatch");
  const int m = 2 * cd.d;
  const bool with_b = !b.is_zero();

  const auto rhs = [&](S t, const VecX<S>& z) {
    const Eigen::Map<const MatX<S>> l(z.data(), m, m);
    MatX<S> y = cd.Y(t);
    if (with_b) y.bottomLeftCorner(cd.d, cd.d) += b.value(t);
    VecX<S> dz(m * m);
    Eigen::Map<MatX<S>>(dz.data(), m, m) = y * l;
    return dz;
  };

  VecX<S> z0(m * m);
  Eigen::Map<MatX<S>>(z0.data(), m, m) = MatX<S>::Identity(m, m);
  const auto sol = dopri5(rhs, z0, S(0), t_end, opt, false);
  MatX<S> l_end = Eigen::Map<const MatX<S>>(sol.ys.back().data(), m, m);
  return SympMatrix<S>(std::move(l_end), S(1e-7));
}

template <typename S>
SympMatrix<S> transition_ode_solve(const ControlData<S>& cd, S t_end,
                                   const OdeOptions<S>& opt = detail::control_ode_options<S>()) {
  ControlCurve<S> none;
  none.d = cd.d;
  none.delta = cd.delta;
  return transition_ode_solve(cd, none, t_end, opt);
}

// W_0 = [[0,0],[B,0]], W_{i+1} = dW_i/dt + W_i Y - Y W_i, evaluated at t = 0.
// Depth m only touches the m-jet of K at 0, so the recursion runs on
// truncated Taylor polynomials with matrix coefficients: exact algebra, no
// curve refits.  The jet itself comes from the fitted stiffness curve.
template <typename S>
std::vector<MatX<S>> bracket_sequence(const ControlData<S>& cd, const MatX<S>& b, int m) {
  if (m < 0 || m > 4) throw DimensionError("bracket_sequence: depth must lie in [0, 4]");
  if (b.rows() != cd.d || b.cols() != cd.d)
    throw DimensionError("bracket_sequence: control block size mismatch");
  if ((b - b.transpose()).cwiseAbs().maxCoeff() > S(1e-12) * (S(1) + b.cwiseAbs().maxCoeff()))
    throw DimensionError("bracket_sequence: control block must be symmetric");

  const int dd = 2 * cd.d;
  std::vector<MatX<S>> y(m + 1, MatX<S>::Zero(dd, dd));
  {
    ChebCurveMat<S> cur = cd.k_curve;
    S fact = S(1);
    for (int r = 0; r <= m; ++r) {
      if (r > 0) {
        cur = cur.derivative();
        fact *= S(r);
      }
      y[r].bottomLeftCorner(cd.d, cd.d) = -cur(S(0)) / fact;
    }
    y[0].topRightCorner(cd.d, cd.d) = cd.D();
  }

  std::vector<MatX<S>> w(m + 1, MatX<S>::Zero(dd, dd));
  w[0].bottomLeftCorner(cd.d, cd.d) = b;

  std::vector<MatX<S>> out;
  out.push_back(w[0]);
  for (int i = 1; i <= m; ++i) {
    std::vector<MatX<S>> nxt(m + 1, MatX<S>::Zero(dd, dd));
    for (int r = 0; r + 1 <= m; ++r) nxt[r] = S(r + 1) * w[r + 1];
    for (int r = 0; r <= m; ++r)
      for (int a = 0; a <= r; ++a) nxt[r] += w[a] * y[r - a] - y[r - a] * w[a];
    w = std::move(nxt);
    out.push_back(w[0]);
  }
  return out;
}

template <typename S>
struct SpanRecord {
  int rank = 0;
  bool full = false;
  int dim_target = 0;
  VecX<S> singular_values;
};

// Rank of the vectorized bracket family over the symmetric basis, depths
// 0..m.  Full span of sp(2d) means the endpoint map is locally onto.
template <typename S>
SpanRecord<S> span_test(const ControlData<S>& cd, int m) {
  if (m < 3) throw DimensionError("span_test: depth must be at least 3");
  const auto basis = detail::symmetric_basis<S>(cd.d);
  const int rows = 4 * cd.d * cd.d;
  MatX<S> stack(rows, static_cast<int>(basis.size()) * (m + 1));
  int col = 0;
  for (const auto& e : basis) {
    const auto ws = bracket_sequence(cd, e, m);
    for (const auto& w : ws)
      stack.col(col++) = Eigen::Map<const VecX<S>>(w.data(), rows);
  }
  Eigen::JacobiSVD<MatX<S>> svd(stack);
  SpanRecord<S> rec;
  rec.singular_values = svd.singularValues();
  rec.rank = detail::svd_rank(rec.singular_values);
  rec.dim_target = cd.d * (2 * cd.d + 1);
  rec.full = rec.rank == rec.dim_target;
  return rec;
}

template <typename S>
struct KdRecord {
  int rank = 0;
  bool member = false;
  VecX<S> singular_values;
};

// Rank of B -> B D K - K D B as a map from symmetric to antisymmetric
// matrices; membership means the map fails to reach every antisymmetric
// direction, which blocks the bracket family at the offending stiffness.
template <typename S>
KdRecord<S> kd_membership(const VecX<S>& d_signs, const MatX<S>& k) {
  const int d = static_cast<int>(d_signs.size());
  if (k.rows() != d || k.cols() != d) throw DimensionError("kd_membership: size mismatch");
  KdRecord<S> rec;
  const int target = d * (d - 1) / 2;
  if (target == 0) {
    rec.rank = 0;
    rec.member = false;
    return rec;
  }
  const MatX<S> dk = d_signs.asDiagonal() * k;
  const auto basis = detail::symmetric_basis<S>(d);
  MatX<S> map(target, static_cast<int>(basis.size()));
  for (size_t c = 0; c < basis.size(); ++c) {
    const MatX<S> a = basis[c] * dk - dk.transpose() * basis[c];
    int row = 0;
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) map(row++, static_cast<int>(c)) = a(i, j);
  }
  Eigen::JacobiSVD<MatX<S>> svd(map);
  rec.singular_values = svd.singularValues();
  rec.rank = detail::svd_rank(rec.singular_values);
  rec.member = rec.rank < target;
  return rec;
}

template <typename S>
struct KdCheckReport {
  int trials = 0;
  int agreements = 0;
  int excused = 0;       // gap inside the tolerance band around the threshold
  int disagreements = 0;
  S min_gap_seen = std::numeric_limits<S>::infinity();
};

// For unit signature the membership set is exactly the stiffness matrices
// with a repeated eigenvalue; compare the rank decision against the spectral
// gap over random draws.
template <typename S = double>
KdCheckReport<S> kd_characterization_check(int d, int trials, unsigned long long seed = 2026,
                                           S gap_threshold = S(1e-6), S band = S(1e-6)) {
  if (d < 2) throw DimensionError("kd_characterization_check: need d >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<S> dist(S(0), S(1));
  const VecX<S> signs = VecX<S>::Ones(d);
  KdCheckReport<S> report;
  report.trials = trials;
  for (int t = 0; t < trials; ++t) {
    MatX<S> k(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) k(i, j) = dist(rng);
    k = ((k + k.transpose()) / S(2)).eval();
    Eigen::SelfAdjointEigenSolver<MatX<S>> eig(k);
    S gap = std::numeric_limits<S>::infinity();
    for (int i = 0; i + 1 < d; ++i)
      gap = std::min(gap, eig.eigenvalues()[i + 1] - eig.eigenvalues()[i]);
    report.min_gap_seen = std::min(report.min_gap_seen, gap);
    const bool member = kd_membership(signs, k).member;
    const bool predicted = gap < gap_threshold;
    if (std::abs(gap - gap_threshold) <= band)
      ++report.excused;
    else if (member == predicted)
      ++report.agreements;
    else
      ++report.disagreements;
  }
  return report;
}

template <typename S>
struct SynthesisRecord {
  ControlCurve<S> b;
  MatX<S> achieved;
  S residual = S(0);
  std::vector<S> history;  // accepted residuals, decreasing
  bool converged = false;
  bool controllability_warning = false;
};

// Shooting with a finite-difference sensitivity and a damped least-squares
// step.  Targets are expected multiplicatively close to the free endpoint;
// residual components outside the sensitivity range abort with the blocked
// directions spelled out.
template <typename S>
SynthesisRecord<S> synthesize_control(const ControlData<S>& cd, const MatX<S>& target,
                                      ControlCurve<S> guess, int max_iter = 12,
                                      S resid_tol = S(1e-9), S trust_radius = S(1e-2)) {
  const int m = 2 * cd.d;
  if (target.rows() != m || target.cols() != m)
    throw DimensionError("synthesize_control: target size mismatch");
  if (guess.coeffs.size() == 0 || guess.d != cd.d)
    throw DimensionError("synthesize_control: control family dimension mismatch");

  const auto opt = detail::control_ode_options<S>();
  const auto endpoint = [&](const ControlCurve<S>& c) {
    return transition_ode_solve(cd, c, cd.delta, opt).value();
  };

  const MatX<S> l0 = endpoint(ControlCurve<S>::make(cd.d, cd.delta, guess.centers()));
  const MatX<S> dev = l0.fullPivLu().solve(target) - MatX<S>::Identity(m, m);
  if (dev.norm() > S(5) * trust_radius) {
    std::ostringstream os;
    os << "synthesize_control: target deviation " << dev.norm()
       << " exceeds the trust region " << S(5) * trust_radius;
    throw ConstructionFailure(os.str());
  }

  SynthesisRecord<S> rec;
  rec.controllability_warning = !span_test(cd, 3).full;

  const int nc = static_cast<int>(guess.coeffs.size());
  const auto to_curve = [&](const VecX<S>& c) {
    ControlCurve<S> out = guess;
    out.coeffs = Eigen::Map<const MatX<S>>(c.data(), guess.coeffs.rows(), guess.coeffs.cols());
    return out;
  };

  VecX<S> c = Eigen::Map<const VecX<S>>(guess.coeffs.data(), nc);
  const VecX<S> target_vec = Eigen::Map<const VecX<S>>(target.data(), m * m);
  VecX<S> f = Eigen::Map<const VecX<S>>(endpoint(to_curve(c)).data(), m * m);
  S res = (target_vec - f).norm();
  rec.history.push_back(res);
  const S tol_eff = resid_tol * (S(1) + target_vec.norm());

  for (int iter = 0; iter < max_iter && res > tol_eff; ++iter) {
    MatX<S> sens(m * m, nc);
    for (int kcol = 0; kcol < nc; ++kcol) {
      const S h = S(1e-6) * (S(1) + std::abs(c[kcol]));
      VecX<S> cp = c;
      cp[kcol] += h;
      const VecX<S> fp = Eigen::Map<const VecX<S>>(endpoint(to_curve(cp)).data(), m * m);
      sens.col(kcol) = (fp - f) / h;
    }

    Eigen::JacobiSVD<MatX<S>> svd(sens, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VecX<S> sv = svd.singularValues();
    // The differenced sensitivity carries a noise floor well below 1e-6 of its
    // top singular value; directions under that cut would blow up the step.
    const int rank = detail::svd_rank(sv, S(1e-6));

    const VecX<S> r = target_vec - f;
    VecX<S> beta = svd.matrixU().transpose() * r;
    VecX<S> r_span = VecX<S>::Zero(r.size());
    for (int i = 0; i < rank; ++i) r_span += beta[i] * svd.matrixU().col(i);
    const VecX<S> r_null = r - r_span;
    if (r_null.norm() > std::max(S(10) * tol_eff, S(0.25) * res)) {
      std::ostringstream os;
      os << "synthesize_control: residual component " << r_null.norm()
         << " is unreachable at the linearization; blocked directions:";
      int shown = 0;
      for (int i = rank; i < sv.size() && shown < 3; ++i, ++shown) {
        const MatX<S> dir = Eigen::Map<const MatX<S>>(svd.matrixU().col(i).data(), m, m);
        os << "\n";
        for (int rr = 0; rr < m; ++rr) {
          os << " [";
          for (int cc = 0; cc < m; ++cc) os << " " << dir(rr, cc);
          os << " ]";
          if (rr + 1 < m) os << "\n";
        }
      }
      throw ConstructionFailure(os.str());
    }

    const S damp = sv.size() ? S(1e-9) * sv[0] : S(0);
    VecX<S> step = VecX<S>::Zero(nc);
    for (int i = 0; i < rank; ++i)
      step += (sv[i] * beta[i] / (sv[i] * sv[i] + damp * damp)) * svd.matrixV().col(i);

    S alpha = S(1);
    bool accepted = false;
    for (int halve = 0; halve < 8; ++halve, alpha /= S(2)) {
      const VecX<S> c_try = c + alpha * step;
      const VecX<S> f_try = Eigen::Map<const VecX<S>>(endpoint(to_curve(c_try)).data(), m * m);
      const S res_try = (target_vec - f_try).norm();
      if (res_try < res) {
        c = c_try;
        f = f_try;
        res = res_try;
        rec.history.push_back(res);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }

  rec.b = to_curve(c);
  rec.achieved = SympMatrix<S>(MatX<S>(Eigen::Map<const MatX<S>>(f.data(), m, m)), S(1e-6)).value();
  rec.residual = res;
  rec.converged = res <= tol_eff;
  return rec;
}

template <typename S>
struct DiracSpanRecord {
  MatX<S> vectors;  // 2d columns: d spike responses, then d spike-derivative responses
  int rank = 0;
  VecX<S> singular_values;
  S convergence_rate = S(0);
  std::vector<S> widths;
  std::vector<S> errors;
};

// Pulled-back endpoint responses y(sigma) = L0(sigma)^{-1} w(sigma) of the
// forced system w' = Y w + b for narrow spike and spike-derivative forcings
// in each vertical direction.  As the width shrinks the columns converge at
// first order to (0 | e_i) and (D e_j | 0), which together frame the fiber.
template <typename S>
DiracSpanRecord<S> dirac_control_span(const ControlData<S>& cd, S sigma, S w) {
  if (!(sigma > S(0)) || sigma > cd.delta)
    throw DimensionError("dirac_control_span: sigma must lie in (0, delta]");
  if (!(w > S(0)) || w > sigma / S(10))
    throw DimensionError("dirac_control_span: width must be well inside (0, sigma)");

  const int m = 2 * cd.d;
  const MatX<S> l0 = transition_ode_solve(cd, sigma).value();
  const auto l0_lu = l0.fullPivLu();

  const auto respond = [&](S width) {
    DiracBump<S> spike{S(0), width};
    OdeOptions<S> opt;
    opt.rel_tol = S(1e-10);
    opt.abs_tol = S(1e-12);
    opt.max_step = width / S(10);
    MatX<S> cols(m, m);
    for (int c = 0; c < m; ++c) {
      const bool derivative = c >= cd.d;
      const int slot = cd.d + c % cd.d;  // vertical forcing direction
      const auto rhs = [&](S t, const VecX<S>& z) {
        VecX<S> dz = cd.Y(t) * z;
        dz[slot] += derivative ? spike.deriv(t) : spike.value(t);
        return dz;
      };
      const auto sol = dopri5(rhs, VecX<S>(VecX<S>::Zero(m)), S(0), sigma, opt, false);
      cols.col(c) = l0_lu.solve(sol.ys.back());
    }
    return cols;
  };

  MatX<S> limit = MatX<S>::Zero(m, m);
  limit.bottomLeftCorner(cd.d, cd.d) = MatX<S>::Identity(cd.d, cd.d);
  limit.topRightCorner(cd.d, cd.d) = cd.D();

  DiracSpanRecord<S> rec;
  for (S width : {w, w / S(2), w / S(4)}) {
    const MatX<S> cols = respond(width);
    if (rec.widths.empty()) rec.vectors = cols;
    rec.widths.push_back(width);
    rec.errors.push_back((cols - limit).norm());
  }
  S acc = S(0);
  for (size_t i = 0; i + 1 < rec.errors.size(); ++i)
    acc += std::log2(rec.errors[i] / rec.errors[i + 1]);
  rec.convergence_rate = acc / S(rec.errors.size() - 1);

  Eigen::JacobiSVD<MatX<S>> svd(rec.vectors);
  rec.singular_values = svd.singularValues();
  rec.rank = detail::svd_rank(rec.singular_values);
  return rec;
}

template <typename S>
struct VerticalSpanRecord {
  MatX<S> eta;     // transition-transported impulse columns
  MatX<S> eta_fd;  // flow-differenced counterparts
  int rank = 0;
  int projected_rank = 0;
  bool spans_verticals = false;
  S fd_deviation = S(0);
  VecX<S> singular_values;
  VecX<S> projected_singular_values;
};

namespace detail {

// Potential whose gradient along the axis orbit equals amp * e_j times a
// unit-mass spike in q1.  The first coordinate uses the spike's running
// integral with a fade placed beyond the last measurement time; fiber
// coordinates multiply the spike by the transverse offset under a plateau
// cutoff centered on the orbit.
template <typename S>
PotentialField<S> impulse_potential(const Hamiltonian<S>& h, const VecX<S>& q_axis, int j,
                                    S spike_start, S w, S fade_start, S amp, S radius) {
  const int n = h.base_dim();
  DiracBump<S> spike{spike_start, w};
  const S fade_len = S(8) * w;

  const auto chi = [q_axis, radius, n](const VecX<S>& q) {
    S r2 = S(0);
    for (int i = 1; i < n; ++i) r2 += (q[i] - q_axis[i]) * (q[i] - q_axis[i]);
    return plateau_c3(std::sqrt(r2) / radius);
  };
  const auto chi_grad = [q_axis, radius, n](const VecX<S>& q) {
    VecX<S> g = VecX<S>::Zero(n);
    S r2 = S(0);
    for (int i = 1; i < n; ++i) r2 += (q[i] - q_axis[i]) * (q[i] - q_axis[i]);
    const S r = std::sqrt(r2);
    if (r == S(0)) return g;
    const S dchi = plateau_c3_d1(r / radius) / radius;
    if (dchi == S(0)) return g;
    for (int i = 1; i < n; ++i) g[i] = dchi * (q[i] - q_axis[i]) / r;
    return g;
  };

  ScalarField<S> f;
  if (j == 0) {
    const auto fade = [fade_start, fade_len](S q1) {
      return plateau_c3((q1 - fade_start) / fade_len);
    };
    const auto fade_d = [fade_start, fade_len](S q1) {
      return plateau_c3_d1((q1 - fade_start) / fade_len) / fade_len;
    };
    f.value = [=](const VecX<S>& q) {
      return amp * spike.cumulative(q[0]) * fade(q[0]) * chi(q);
    };
    f.grad = [=](const VecX<S>& q) {
      const S cum = spike.cumulative(q[0]);
      const S fd = fade(q[0]);
      const S cx = chi(q);
      VecX<S> g = amp * cum * fd * chi_grad(q);
      g[0] += amp * (spike.value(q[0]) * fd + cum * fade_d(q[0])) * cx;
      return g;
    };
  } else {
    f.value = [=](const VecX<S>& q) {
      return amp * (q[j] - q_axis[j]) * spike.value(q[0]) * chi(q);
    };
    f.grad = [=](const VecX<S>& q) {
      const S off = q[j] - q_axis[j];
      const S sp = spike.value(q[0]);
      const S cx = chi(q);
      VecX<S> g = amp * off * sp * chi_grad(q);
      g[0] += amp * off * spike.deriv(q[0]) * cx;
      g[j] += amp * sp * cx;
      return g;
    };
  }
  return PotentialField<S>(f, h.domain());
}

}  // namespace detail

// Impulse responses of a straightened model: for each measurement time and
// each base direction, kick the momentum with a narrow potential spike just
// ahead of the measurement and record the flow response at all later times.
// The transition-built family stacks the same impulses transported by the
// variational flow; spanning the product of verticals is the transversality
// that lets stacked kicks steer every fiber at once.
template <typename S>
VerticalSpanRecord<S> vertical_span_check(const Hamiltonian<S>& h, const VecX<S>& x0,
                                          const std::vector<S>& sigmas, S w, S fd_eps = S(1e-6),
                                          S cutoff_radius = S(0.5)) {
  const int n = h.base_dim();
  const int d = n - 1;
  const int k = static_cast<int>(sigmas.size());
  if (static_cast<int>(x0.size()) != 2 * n)
    throw DimensionError("vertical_span_check: state size does not match model");
  if (k <= 2 * d + 2)
    throw DimensionError("vertical_span_check: need more than 2d+2 measurement times");
  for (int i = 0; i < k; ++i) {
    if (!(sigmas[i] > (i == 0 ? S(2) * w : sigmas[i - 1] + S(2) * w)))
      throw DimensionError("vertical_span_check: times must ascend with gaps above 2w");
  }

  const VecX<S> xf = hamiltonian_vector_field(h, x0);
  if (xf.head(n).norm() <= S(1e-12) * (S(1) + x0.cwiseAbs().maxCoeff()))
    throw HypothesisViolation("vertical_span_check: base velocity vanishes at the anchor");

  const S t_last = sigmas.back();
  FlowConfig<S> cfg;
  cfg.rel_tol = S(1e-11);
  cfg.abs_tol = S(1e-13);
  cfg.max_step = w / S(10);

  const auto base = integrate_flow(h, x0, {S(0), t_last}, cfg);
  for (int i = 0; i < k; ++i) {
    VecX<S> want = x0;
    want[0] += sigmas[i];
    const VecX<S> got = base.state(sigmas[i]);
    VecX<S> diff(2 * n);
    diff.head(n) = h.domain().wrap_delta(got.head(n), want.head(n));
    diff.tail(n) = got.tail(n) - want.tail(n);
    if (diff.cwiseAbs().maxCoeff() > S(1e-7) * (S(1) + x0.cwiseAbs().maxCoeff()))
      throw HypothesisViolation(
          "vertical_span_check: the flow is not straightened along the first base axis");
  }

  const auto var = integrate_variational(h, x0, {S(0), t_last}, cfg);

  VerticalSpanRecord<S> rec;
  rec.eta = MatX<S>::Zero(2 * n * k, n * k);
  rec.eta_fd = MatX<S>::Zero(2 * n * k, n * k);

  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) {
      const int col = i * n + j;
      VecX<S> impulse = VecX<S>::Zero(2 * n);
      impulse[n + j] = S(-1);
      for (int s = i; s < k; ++s)
        rec.eta.block(2 * n * s, col, 2 * n, 1) = var.transition(sigmas[i], sigmas[s]) * impulse;

      const S spike_start = x0[0] + sigmas[i] - S(1.5) * w;
      const auto u = detail::impulse_potential(h, VecX<S>(x0.head(n)), j, spike_start, w,
                                               x0[0] + t_last + S(2) * w, fd_eps, cutoff_radius);
      const auto bumped = integrate_flow(add_potential(h, u), x0, {S(0), t_last}, cfg);
      for (int s = 0; s < k; ++s)
        rec.eta_fd.block(2 * n * s, col, 2 * n, 1) =
            (bumped.state(sigmas[s]) - base.state(sigmas[s])) / fd_eps;
    }

  rec.fd_deviation = (rec.eta_fd - rec.eta).norm();

  Eigen::JacobiSVD<MatX<S>> svd(rec.eta);
  rec.singular_values = svd.singularValues();
  rec.rank = detail::svd_rank(rec.singular_values);

  MatX<S> vertical_rows(n * k, n * k);
  for (int s = 0; s < k; ++s)
    vertical_rows.middleRows(n * s, n) = rec.eta.middleRows(2 * n * s + n, n);
  Eigen::JacobiSVD<MatX<S>> psvd(vertical_rows);
  rec.projected_singular_values = psvd.singularValues();
  rec.projected_rank = detail::svd_rank(rec.projected_singular_values);
  rec.spans_verticals = rec.projected_rank == n * k;
  return rec;
}

}  // namespace manekit
