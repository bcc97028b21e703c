#pragma once

// Potentials shaped around an orbit segment: fields vanishing to first order
// along the axis with a prescribed transverse second jet, spike fields with a
// prescribed first jet, and the plumbing that carries them from straightened
// coordinates back to the original model.

#include <cmath>
#include <functional>
#include <memory>
#include <sstream>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include <manekit/bump.hpp>
#include <manekit/chart.hpp>
#include <manekit/control.hpp>
#include <manekit/errors.hpp>
#include <manekit/hamiltonian.hpp>
#include <manekit/orbits.hpp>
#include <manekit/types.hpp>

namespace manekit {

namespace detail {

// Radial plateau cutoff chi(|qhat| / r): identically one inside the half
// radius, zero from r outward, with analytic first and second derivatives.
// All derivative weight sits on the annulus, where |qhat| is bounded away
// from zero.
template <typename S>
struct RadialCutoff {
  S r = S(0);

  S chi(const VecX<S>& qh) const { return plateau_c3(qh.norm() / r); }

  VecX<S> grad(const VecX<S>& qh) const {
    const S nrm = qh.norm();
    const S g = plateau_c3_d1(nrm / r);
    if (g == S(0)) return VecX<S>::Zero(qh.size());
    return VecX<S>((g / (r * nrm)) * qh);
  }

  MatX<S> hess(const VecX<S>& qh) const {
    const int d = static_cast<int>(qh.size());
    const S nrm = qh.norm();
    const S g1 = plateau_c3_d1(nrm / r);
    const S g2 = plateau_c3_d2(nrm / r);
    if (g1 == S(0) && g2 == S(0)) return MatX<S>::Zero(d, d);
    const VecX<S> nhat = qh / nrm;
    const MatX<S> proj = nhat * nhat.transpose();
    return MatX<S>((g2 / (r * r)) * proj +
                   (g1 / (r * nrm)) * (MatX<S>::Identity(d, d) - proj));
  }
};

}  // namespace detail

// A potential defined in straightened segment coordinates (q1, qhat): the
// axis q1 carries the segment, the support is a tube of the given radius over
// an interval inside (0, delta).  Fields built by admissible_from_B vanish
// together with their differential along the axis; spike fields from
// dirac_jet_potential instead carry a designed nonzero first jet there.
template <typename S>
struct AdmissiblePotential {
  int n = 0;  // base dimension d + 1
  S delta = S(0);
  S radius = S(0);
  S support_lo = S(0);
  S support_hi = S(0);
  ControlCurve<S> b;  // transverse second-jet curve; empty for spike fields
  ScalarField<S> field;

  S value(const VecX<S>& q) const {
    check(q);
    return field.value(q);
  }
  VecX<S> grad(const VecX<S>& q) const {
    check(q);
    return field.grad(q);
  }
  MatX<S> hess(const VecX<S>& q) const {
    check(q);
    return field.hess(q);
  }

  PotentialField<S> to_field() const {
    VecX<S> lo = VecX<S>::Constant(n, -radius);
    VecX<S> hi = VecX<S>::Constant(n, radius);
    lo[0] = support_lo;
    hi[0] = support_hi;
    return PotentialField<S>(field, Domain<S>::euclidean(n))
        .with_support_box(std::move(lo), std::move(hi));
  }

 private:
  void check(const VecX<S>& q) const {
    if (q.size() != n)
      throw DimensionError("AdmissiblePotential: point size does not match base dim");
  }
};

// u(q1, qhat) = qhat . B(q1) qhat / 2 times the radial cutoff.  The quadratic
// factor kills the value and differential on the axis, and the transverse
// second derivative block there is exactly B(q1).
template <typename S>
AdmissiblePotential<S> admissible_from_B(const ControlCurve<S>& b, S r) {
  if (b.d < 1) throw DimensionError("admissible_from_B: curve has no fiber dimension");
  if (!(r > S(0))) throw DimensionError("admissible_from_B: radius must be positive");

  const int d = b.d;
  const int n = d + 1;
  const detail::RadialCutoff<S> cut{r};

  AdmissiblePotential<S> u;
  u.n = n;
  u.delta = b.delta;
  u.radius = r;
  const S h = b.delta / S(b.centers() + 1);
  u.support_lo = S(0.1) * h;
  u.support_hi = b.delta - S(0.1) * h;
  u.b = b;

  u.field.value = [b, cut, d](const VecX<S>& q) {
    const VecX<S> qh = q.tail(d);
    const S chi = cut.chi(qh);
    if (chi == S(0)) return S(0);
    return S(0.5) * S(qh.dot(b.value(q[0]) * qh)) * chi;
  };
  u.field.grad = [b, cut, d, n](const VecX<S>& q) {
    VecX<S> g = VecX<S>::Zero(n);
    const VecX<S> qh = q.tail(d);
    const S chi = cut.chi(qh);
    if (chi == S(0)) return g;
    const MatX<S> bv = b.value(q[0]);
    const S quad = qh.dot(bv * qh);
    g[0] = S(0.5) * qh.dot(b.value_d1(q[0]) * qh) * chi;
    g.tail(d) = chi * (bv * qh) + S(0.5) * quad * cut.grad(qh);
    return g;
  };
  u.field.hess = [b, cut, d, n](const VecX<S>& q) {
    MatX<S> hh = MatX<S>::Zero(n, n);
    const VecX<S> qh = q.tail(d);
    const S chi = cut.chi(qh);
    if (chi == S(0)) return hh;
    const MatX<S> bv = b.value(q[0]);
    const MatX<S> b1 = b.value_d1(q[0]);
    const S quad = qh.dot(bv * qh);
    const VecX<S> cg = cut.grad(qh);
    hh(0, 0) = S(0.5) * qh.dot(b.value_d2(q[0]) * qh) * chi;
    const VecX<S> cross =
        chi * (b1 * qh) + S(0.5) * S(qh.dot(b1 * qh)) * cg;
    hh.block(0, 1, 1, d) = cross.transpose();
    hh.block(1, 0, d, 1) = cross;
    const VecX<S> bq = bv * qh;
    hh.bottomRightCorner(d, d) = chi * bv + bq * cg.transpose() +
                                 cg * bq.transpose() +
                                 S(0.5) * quad * cut.hess(qh);
    return hh;
  };
  return u;
}

// Spike field whose differential along the axis is e_j times a unit-mass
// spike of the given width at sigma.  Directions j >= 2 use the exact linear
// factor q_j; the axis direction j = 1 integrates the spike and fades the
// accumulated constant back to zero over (sigma + 4.5 w, sigma + 8.5 w), so
// the first jet matches the spike everywhere ahead of the fade and the
// support stays compact.
template <typename S>
AdmissiblePotential<S> dirac_jet_potential(int n, int j, S sigma, S w, S r) {
  if (n < 2) throw DimensionError("dirac_jet_potential: base dim must be at least 2");
  if (j < 1 || j > n)
    throw DimensionError("dirac_jet_potential: direction index out of range");
  if (!(w > S(0)) || !(r > S(0)))
    throw DimensionError("dirac_jet_potential: width and radius must be positive");

  const int d = n - 1;
  const detail::RadialCutoff<S> cut{r};
  const DiracBump<S> spike{sigma - w / 2, w};

  AdmissiblePotential<S> u;
  u.n = n;
  u.delta = sigma + S(9) * w;
  u.radius = r;
  u.support_lo = sigma - w / 2;

  if (j >= 2) {
    u.support_hi = sigma + w / 2;
    const int jj = j - 2;  // position of q_j inside qhat = (q_2, ..., q_n)
    u.field.value = [spike, cut, d, jj](const VecX<S>& q) {
      const S sv = spike.value(q[0]);
      if (sv == S(0)) return S(0);
      const VecX<S> qh = q.tail(d);
      return qh[jj] * sv * cut.chi(qh);
    };
    u.field.grad = [spike, cut, d, n, jj](const VecX<S>& q) {
      VecX<S> g = VecX<S>::Zero(n);
      const VecX<S> qh = q.tail(d);
      const S chi = cut.chi(qh);
      if (chi == S(0)) return g;
      const S sv = spike.value(q[0]);
      const S sd = spike.deriv(q[0]);
      if (sv == S(0) && sd == S(0)) return g;
      g[0] = qh[jj] * sd * chi;
      VecX<S> gh = qh[jj] * cut.grad(qh);
      gh[jj] += chi;
      g.tail(d) = sv * gh;
      return g;
    };
    u.field.hess = [spike, cut, d, n, jj](const VecX<S>& q) {
      MatX<S> hh = MatX<S>::Zero(n, n);
      const VecX<S> qh = q.tail(d);
      const S chi = cut.chi(qh);
      if (chi == S(0)) return hh;
      const S sv = spike.value(q[0]);
      const S sd = spike.deriv(q[0]);
      const S s2 = spike.deriv2(q[0]);
      if (sv == S(0) && sd == S(0) && s2 == S(0)) return hh;
      const VecX<S> cg = cut.grad(qh);
      hh(0, 0) = qh[jj] * s2 * chi;
      VecX<S> gh = qh[jj] * cg;
      gh[jj] += chi;
      hh.block(0, 1, 1, d) = sd * gh.transpose();
      hh.block(1, 0, d, 1) = sd * gh;
      MatX<S> hq = qh[jj] * cut.hess(qh);
      hq.col(jj) += cg;
      hq.row(jj) += cg.transpose();
      hh.bottomRightCorner(d, d) = sv * hq;
      return hh;
    };
    return u;
  }

  // Axis direction: value = running integral of the spike, faded out.
  const S fade_lo = sigma + w / 2 + S(4) * w;
  const S fade_len = S(8) * w;
  u.support_hi = fade_lo + fade_len / 2;
  const auto axial = [spike, fade_lo, fade_len](S t, S& s0, S& s1, S& s2) {
    const S c = spike.cumulative(t);
    const S cv = spike.value(t);
    const S arg = (t - (fade_lo - fade_len / 2)) / fade_len;
    const S f = plateau_c3(arg);
    const S f1 = plateau_c3_d1(arg) / fade_len;
    const S f2 = plateau_c3_d2(arg) / (fade_len * fade_len);
    s0 = c * f;
    s1 = cv * f + c * f1;
    s2 = spike.deriv(t) * f + 2 * cv * f1 + c * f2;
  };
  u.field.value = [axial, cut, d](const VecX<S>& q) {
    S s0, s1, s2;
    axial(q[0], s0, s1, s2);
    if (s0 == S(0)) return S(0);
    return s0 * cut.chi(q.tail(d));
  };
  u.field.grad = [axial, cut, d, n](const VecX<S>& q) {
    VecX<S> g = VecX<S>::Zero(n);
    const VecX<S> qh = q.tail(d);
    const S chi = cut.chi(qh);
    if (chi == S(0)) return g;
    S s0, s1, s2;
    axial(q[0], s0, s1, s2);
    g[0] = s1 * chi;
    g.tail(d) = s0 * cut.grad(qh);
    return g;
  };
  u.field.hess = [axial, cut, d, n](const VecX<S>& q) {
    MatX<S> hh = MatX<S>::Zero(n, n);
    const VecX<S> qh = q.tail(d);
    const S chi = cut.chi(qh);
    if (chi == S(0)) return hh;
    S s0, s1, s2;
    axial(q[0], s0, s1, s2);
    const VecX<S> cg = cut.grad(qh);
    hh(0, 0) = s2 * chi;
    hh.block(0, 1, 1, d) = s1 * cg.transpose();
    hh.block(1, 0, d, 1) = s1 * cg;
    hh.bottomRightCorner(d, d) = s0 * cut.hess(qh);
    return hh;
  };
  return u;
}

namespace detail {

// Forward image of a potential's support tube under a chart, sampled along
// the axis: center points, a conservative ball radius per sample, and the
// base inverse with its Jacobian.  The gate radius over-covers the sampled
// tube boundary images, so points past every gate cannot meet the support.
template <typename S>
struct ChartTube {
  std::shared_ptr<const FiberedChart<S>> owner;  // keeps the piece pointers alive
  std::vector<VecX<S>> centers;
  std::vector<S> radii;  // forward image radius of the fiber disk per center
  std::vector<S> gates;
  std::vector<const HomogeneousPiece<S>*> pieces;  // forward order
  int n = 0;

  bool trivial() const { return pieces.empty(); }

  bool past_gates(const VecX<S>& q) const {
    if (centers.empty()) return false;
    for (size_t i = 0; i < centers.size(); ++i)
      if ((q - centers[i]).norm() <= gates[i]) return false;
    return true;
  }

  VecX<S> base_inverse(const VecX<S>& q) const {
    VecX<S> y = q;
    for (const auto* f : pieces) y = f->phi_inv(y);
    return y;
  }

  // d(base inverse) accumulated as the product of inverted piece Jacobians
  // at the successive preimages.
  MatX<S> base_inverse_jacobian(const VecX<S>& q) const {
    MatX<S> jac = MatX<S>::Identity(n, n);
    VecX<S> y = q;
    for (const auto* f : pieces) {
      y = f->phi_inv(y);
      jac = f->dphi(y).partialPivLu().solve(jac).eval();
    }
    return jac;
  }
};

template <typename S>
std::shared_ptr<const ChartTube<S>> make_chart_tube(
    const std::shared_ptr<const FiberedChart<S>>& chart,
    const AdmissiblePotential<S>& u, bool with_gates) {
  auto tube = std::make_shared<ChartTube<S>>();
  tube->owner = chart;
  const int n = chart->base_dim();
  tube->n = n;
  for (const auto& piece : chart->pieces())
    if (const auto* f = std::get_if<HomogeneousPiece<S>>(&piece)) {
      if (!f->phi_inv)
        throw HypothesisViolation(
            "transport: a chart piece has no inverse callback");
      tube->pieces.push_back(f);
    }
  if (tube->pieces.empty() || !with_gates) return tube;

  const auto base_fwd = [&](const VecX<S>& q) {
    VecX<S> y = q;
    for (auto it = tube->pieces.rbegin(); it != tube->pieces.rend(); ++it)
      y = (*it)->phi(y);
    return y;
  };

  const int samples = 65;
  const S lo = u.support_lo, hi = u.support_hi;
  std::vector<S> rhos;
  for (int i = 0; i < samples; ++i) {
    const S t = lo + (hi - lo) * S(i) / S(samples - 1);
    VecX<S> axis = VecX<S>::Zero(n);
    axis[0] = t;
    VecX<S> c;
    try {
      c = base_fwd(axis);
    } catch (const std::runtime_error&) {
      continue;  // axis sample outside the chart's reach; neighbors cover it
    }
    S rho = u.radius;
    for (int k = 1; k < n; ++k)
      for (S sgn : {S(-1), S(1)}) {
        VecX<S> qb = axis;
        qb[k] = sgn * u.radius;
        try {
          rho = std::max(rho, S((base_fwd(qb) - c).norm()));
        } catch (const std::runtime_error&) {
        }
      }
    tube->centers.push_back(c);
    rhos.push_back(rho);
  }
  S spacing = S(0);
  for (size_t i = 1; i < tube->centers.size(); ++i)
    spacing = std::max(spacing, S((tube->centers[i] - tube->centers[i - 1]).norm()));
  tube->radii = rhos;
  for (size_t i = 0; i < rhos.size(); ++i)
    tube->gates.push_back(S(1.6) * rhos[i] + 2 * spacing);
  return tube;
}

}  // namespace detail

// Carries a potential from chart coordinates back to the original base: the
// returned field is u composed with the base part of the chart inverse, and
// identically zero past a sampled cover of the support tube's image, so far
// points never reach the piece inverses.  The value and gradient are
// analytic; the Hessian falls back to differencing the gradient.
template <typename S>
PotentialField<S> transport_potential(const AdmissiblePotential<S>& u,
                                      const FiberedChart<S>& chart) {
  if (chart.base_dim() != u.n)
    throw DimensionError("transport_potential: base dimensions differ");
  if (u.delta > chart.radius() * (S(1) + S(1e-12)) || u.radius > chart.radius()) {
    std::ostringstream os;
    os << "transport_potential: support tube (axis " << u.delta << ", radius "
       << u.radius << ") exits the chart tube of radius " << chart.radius();
    throw HypothesisViolation(os.str());
  }

  auto ch = std::make_shared<const FiberedChart<S>>(chart);
  auto tube = detail::make_chart_tube(ch, u, true);
  if (tube->trivial()) return u.to_field();

  // An inversion that breaks down can only do so off the chart's certified
  // tube, where the potential is zero anyway, so breakdown extends by zero.
  ScalarField<S> f;
  const auto uf = u.field;
  f.value = [uf, tube](const VecX<S>& q) {
    if (tube->past_gates(q)) return S(0);
    try {
      return uf.value(tube->base_inverse(q));
    } catch (const std::runtime_error&) {
      return S(0);
    }
  };
  f.grad = [uf, tube](const VecX<S>& q) {
    if (tube->past_gates(q)) return VecX<S>(VecX<S>::Zero(q.size()));
    try {
      return VecX<S>(tube->base_inverse_jacobian(q).transpose() *
                     uf.grad(tube->base_inverse(q)));
    } catch (const std::runtime_error&) {
      return VecX<S>(VecX<S>::Zero(q.size()));
    }
  };
  // Chain rule with the inverse's curvature taken by differencing its
  // Jacobian: the chart varies on the geometry scale, so the step error is
  // far below what differencing the potential's own gradient would leave.
  f.hess = [uf, tube](const VecX<S>& q) {
    const int n = static_cast<int>(q.size());
    if (tube->past_gates(q)) return MatX<S>(MatX<S>::Zero(n, n));
    try {
      const VecX<S> y = tube->base_inverse(q);
      const MatX<S> jac = tube->base_inverse_jacobian(q);
      const VecX<S> g = uf.grad(y);
      MatX<S> hh = jac.transpose() * uf.hess(y) * jac;
      const S step = S(1e-5) * (S(1) + q.norm());
      for (int i = 0; i < n; ++i) {
        VecX<S> qp = q, qm = q;
        qp[i] += step;
        qm[i] -= step;
        const MatX<S> dj = (tube->base_inverse_jacobian(qp) -
                            tube->base_inverse_jacobian(qm)) /
                           (2 * step);
        for (int j = 0; j < n; ++j) hh(i, j) += dj.col(j).dot(g);
      }
      return MatX<S>(((hh + hh.transpose()) / 2).eval());
    } catch (const std::runtime_error&) {
      return MatX<S>(MatX<S>::Zero(n, n));
    }
  };

  PotentialField<S> out(std::move(f), Domain<S>::euclidean(u.n));
  if (tube->centers.empty()) return out;
  VecX<S> lo = tube->centers.front();
  VecX<S> hi = tube->centers.front();
  for (size_t i = 0; i < tube->centers.size(); ++i) {
    const VecX<S> pad = VecX<S>::Constant(u.n, tube->gates[i]);
    lo = lo.cwiseMin(VecX<S>(tube->centers[i] - pad));
    hi = hi.cwiseMax(VecX<S>(tube->centers[i] + pad));
  }
  return out.with_support_box(std::move(lo), std::move(hi));
}

// True when the projected orbit outside the window keeps clear of the
// support tube, with a half-radius margin added radially.  Samples far from
// the window arc (three radii, room for the chart's distortion) are clear
// outright; nearer ones are classified in chart coordinates, falling back to
// plain distance where the inversion breaks down.
template <typename S>
bool disjoint_support_check(const AdmissiblePotential<S>& u,
                            const PeriodicOrbit<S>& orbit, S t_a, S t_b,
                            const FiberedChart<S>& chart) {
  if (chart.base_dim() != u.n)
    throw DimensionError("disjoint_support_check: base dimensions differ");
  if (!(t_a < t_b) || t_a < S(0) || t_b > orbit.period)
    throw DimensionError("disjoint_support_check: window must sit inside one period");

  auto ch = std::make_shared<const FiberedChart<S>>(chart);
  auto tube = detail::make_chart_tube(ch, u, false);
  const auto& dom = orbit.samples.domain();

  const int arc = 200;
  std::vector<VecX<S>> window;
  window.reserve(arc);
  for (int i = 0; i < arc; ++i)
    window.push_back(
        orbit.samples.state(t_a + (t_b - t_a) * S(i) / S(arc - 1)).head(u.n));

  const int samples = 600;
  for (int i = 0; i < samples; ++i) {
    const S t = orbit.period * S(i) / S(samples);
    if (t >= t_a && t <= t_b) continue;
    const VecX<S> q = orbit.samples.state(t).head(u.n);
    S dmin = std::numeric_limits<S>::infinity();
    for (const auto& w : window)
      dmin = std::min(dmin, detail::base_distance(dom, q, w));
    if (dmin > S(3) * u.radius) continue;
    bool inside;
    try {
      const VecX<S> y = tube->trivial() ? q : tube->base_inverse(q);
      inside = y[0] > u.support_lo && y[0] < u.support_hi &&
               y.tail(u.n - 1).norm() < S(1.5) * u.radius;
    } catch (const std::runtime_error&) {
      inside = dmin < u.radius;
    }
    if (inside) return false;
  }
  return true;
}

// Radius rule for new support tubes: a quarter of the smaller of the chart
// radius and the projected orbit's lateral self-distance, the latter measured
// from the window arc to samples further than two window lengths away in
// time.  Librations revisit their own arc, so the rule collapses for them.
template <typename S>
S default_tube_radius(const PeriodicOrbit<S>& orbit, S t_a, S t_b, S chart_radius) {
  if (!(t_a < t_b) || t_a < S(0) || t_b > orbit.period)
    throw DimensionError("default_tube_radius: window must sit inside one period");
  if (!(chart_radius > S(0)))
    throw DimensionError("default_tube_radius: chart radius must be positive");

  const auto& dom = orbit.samples.domain();
  const int nb = dom.base_dim;
  const S len = t_b - t_a;
  S buffer = 2 * len;
  const S slack = (orbit.period - len) / 2;
  if (buffer > S(0.9) * slack) buffer = S(0.9) * slack;

  const int grid = 400;
  std::vector<VecX<S>> window;
  window.reserve(grid);
  for (int i = 0; i < grid; ++i)
    window.push_back(orbit.samples.state(t_a + len * S(i) / S(grid - 1)).head(nb));

  S self_dist = std::numeric_limits<S>::infinity();
  for (int i = 0; i < grid; ++i) {
    const S t = orbit.period * S(i) / S(grid);
    const S lead = t - t_b;
    const S trail = t_a - t + (t > t_a ? orbit.period : S(0));
    const S gap = std::min(lead < S(0) ? lead + orbit.period : lead,
                           trail < S(0) ? trail + orbit.period : trail);
    if (t >= t_a && t <= t_b) continue;
    if (gap < buffer) continue;
    const VecX<S> q = orbit.samples.state(t).head(nb);
    for (const auto& w : window)
      self_dist = std::min(self_dist, detail::base_distance(dom, q, w));
  }
  return std::min(self_dist, chart_radius) / 4;
}

}  // namespace manekit
