#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include <manekit/errors.hpp>

namespace manekit {

template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

using Vec = VecX<double>;
using Mat = MatX<double>;

template <typename S>
inline constexpr S pi = S(3.14159265358979323846264338327950288L);

template <typename S>
bool all_finite(const MatX<S>& m) {
  return m.allFinite();
}
template <typename S>
bool all_finite(const VecX<S>& v) {
  return v.allFinite();
}

// Configuration base.  Coordinates flagged periodic are identified modulo
// their period; everything else lives on the real line.
template <typename S>
struct Domain {
  int base_dim = 0;
  std::vector<bool> periodic;  // size base_dim
  VecX<S> periods;             // size base_dim, entries used only where periodic

  static Domain euclidean(int n) {
    check_dim(n);
    Domain d;
    d.base_dim = n;
    d.periodic.assign(n, false);
    d.periods = VecX<S>::Zero(n);
    return d;
  }

  // First coordinate periodic with period 2*pi, the rest Euclidean.
  static Domain cylinder(int n, S period = 2 * pi<S>) {
    check_dim(n);
    Domain d = euclidean(n);
    d.periodic[0] = true;
    d.periods[0] = period;
    return d;
  }

  static Domain torus(int n, S period = 2 * pi<S>) {
    check_dim(n);
    Domain d = euclidean(n);
    for (int i = 0; i < n; ++i) {
      d.periodic[i] = true;
      d.periods[i] = period;
    }
    return d;
  }

  bool any_periodic() const {
    for (bool b : periodic)
      if (b) return true;
    return false;
  }

  // Componentwise b - a with periodic coordinates reduced to (-T/2, T/2].
  VecX<S> wrap_delta(const VecX<S>& b, const VecX<S>& a) const {
    if (b.size() != base_dim || a.size() != base_dim)
      throw DimensionError("wrap_delta: vector size does not match base_dim");
    VecX<S> d = b - a;
    for (int i = 0; i < base_dim; ++i) {
      if (!periodic[i]) continue;
      const S t = periods[i];
      d[i] -= t * std::floor(d[i] / t + S(0.5));
    }
    return d;
  }

  // Difference of full phase points (q wrapped, p untouched).
  VecX<S> phase_delta(const VecX<S>& b, const VecX<S>& a) const {
    const int n = base_dim;
    if (b.size() != 2 * n || a.size() != 2 * n)
      throw DimensionError("phase_delta: vector size does not match phase dim");
    VecX<S> d(2 * n);
    d.head(n) = wrap_delta(b.head(n), a.head(n));
    d.tail(n) = b.tail(n) - a.tail(n);
    return d;
  }

 private:
  static void check_dim(int n) {
    if (n < 1) throw DimensionError("Domain: base_dim must be positive");
  }
};

template <typename S>
struct PhasePoint {
  VecX<S> q;
  VecX<S> p;

  int dim() const { return static_cast<int>(q.size()); }

  void validate() const {
    if (q.size() == 0 || q.size() != p.size())
      throw DimensionError("PhasePoint: q and p must have equal positive size");
    if (!all_finite(q) || !all_finite(p))
      throw EvaluationError("PhasePoint: non-finite coordinate");
  }

  VecX<S> to_vector() const {
    VecX<S> x(q.size() + p.size());
    x << q, p;
    return x;
  }

  static PhasePoint from_vector(const VecX<S>& x) {
    if (x.size() % 2 != 0)
      throw DimensionError("PhasePoint::from_vector: odd length");
    PhasePoint pt;
    const auto n = x.size() / 2;
    pt.q = x.head(n);
    pt.p = x.tail(n);
    return pt;
  }
};

// J = [[0, I], [-I, 0]] acting on (q, p) blocks of size d each.
template <typename S>
MatX<S> standard_symplectic_form(int d) {
  if (d < 1) throw DimensionError("standard_symplectic_form: d must be positive");
  MatX<S> j = MatX<S>::Zero(2 * d, 2 * d);
  j.topRightCorner(d, d) = MatX<S>::Identity(d, d);
  j.bottomLeftCorner(d, d) = -MatX<S>::Identity(d, d);
  return j;
}

template <typename S>
S symplectic_residual(const MatX<S>& m) {
  if (m.rows() != m.cols() || m.rows() % 2 != 0)
    throw DimensionError("symplectic_residual: matrix must be square of even size");
  const MatX<S> j = standard_symplectic_form<S>(static_cast<int>(m.rows()) / 2);
  return (m.transpose() * j * m - j).cwiseAbs().maxCoeff();
}

template <typename S>
S hamiltonian_residual(const MatX<S>& w) {
  if (w.rows() != w.cols() || w.rows() % 2 != 0)
    throw DimensionError("hamiltonian_residual: matrix must be square of even size");
  const MatX<S> j = standard_symplectic_form<S>(static_cast<int>(w.rows()) / 2);
  const MatX<S> jw = j * w;
  return (jw - jw.transpose()).cwiseAbs().maxCoeff();
}

// Checked linear symplectic map: m^T J m = J within tol.
template <typename S>
class SympMatrix {
 public:
  explicit SympMatrix(MatX<S> m, S tol = S(-1)) : m_(std::move(m)) {
    const S scale = S(1) + m_.cwiseAbs().maxCoeff() * m_.cwiseAbs().maxCoeff();
    tol_ = tol > S(0) ? tol : S(1e-8) * scale;
    residual_ = symplectic_residual(m_);
    if (!(residual_ <= tol_)) {
      std::ostringstream os;
      os << "SympMatrix: symplecticity residual " << residual_
         << " exceeds tolerance " << tol_;
      throw NumericalFailure(os.str());
    }
  }

  const MatX<S>& value() const { return m_; }
  operator const MatX<S>&() const { return m_; }
  S residual() const { return residual_; }
  S tol() const { return tol_; }

  // Symplectic inverse -J m^T J, exact up to rounding.
  MatX<S> inverse() const {
    const MatX<S> j = standard_symplectic_form<S>(static_cast<int>(m_.rows()) / 2);
    return -j * m_.transpose() * j;
  }

 private:
  MatX<S> m_;
  S tol_;
  S residual_;
};

// Checked element of sp(2d): J w symmetric within tol (absolute).
template <typename S>
class HamMatrix {
 public:
  explicit HamMatrix(MatX<S> w, S tol = S(1e-12)) : w_(std::move(w)), tol_(tol) {
    residual_ = hamiltonian_residual(w_);
    if (!(residual_ <= tol_)) {
      std::ostringstream os;
      os << "HamMatrix: symmetry residual of J*W is " << residual_
         << ", tolerance " << tol_;
      throw NumericalFailure(os.str());
    }
  }

  const MatX<S>& value() const { return w_; }
  operator const MatX<S>&() const { return w_; }
  S residual() const { return residual_; }

 private:
  MatX<S> w_;
  S tol_;
  S residual_;
};

}  // namespace manekit
