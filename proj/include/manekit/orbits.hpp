#pragma once

// Periodic orbits: Newton shooting, minimal periods, neat times, restricted
// linearized return maps, and scans for the fiberwise degeneracy locus.

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <manekit/flow.hpp>
#include <manekit/geometry.hpp>

namespace manekit {

template <typename S>
struct PeriodicOrbit {
  VecX<S> x0;
  S period = S(0);
  S minimal_period = S(0);
  int multiplicity = 1;
  S energy = S(0);
  Trajectory<S> samples;  // over [0, period]
  S closure_residual = S(0);
  std::vector<S> residual_history;
  bool degenerate_warning = false;
  std::string warning;
};

template <typename S>
struct OrbitSearchConfig {
  int max_iters = 30;
  S tol = S(1e-9);
  FlowConfig<S> flow;
  bool pin_energy = false;
  S energy = S(0);
};

template <typename S>
struct MinimalPeriodRecord {
  S T_min = S(0);
  int multiplicity = 1;
};

template <typename S>
struct TimeInterval {
  S a = S(0);
  S b = S(0);
  S length() const { return b - a; }
  bool contains(S t) const { return t > a && t < b; }
};

// Orbit with samples over [0, T], closure measured on the model's domain.
template <typename S>
PeriodicOrbit<S> make_orbit(const Hamiltonian<S>& h, const VecX<S>& x0, S period,
                            const FlowConfig<S>& flow = FlowConfig<S>{},
                            S closure_tol = S(1e-6)) {
  if (!(period > S(0))) throw DimensionError("make_orbit: period must be positive");
  PeriodicOrbit<S> orbit;
  orbit.x0 = x0;
  orbit.period = period;
  orbit.energy = h.value(x0);
  orbit.samples = integrate_flow(h, x0, {S(0), period}, flow);
  orbit.closure_residual =
      h.domain().phase_delta(orbit.samples.state(period), x0).cwiseAbs().maxCoeff();
  const S scale = S(1) + x0.cwiseAbs().maxCoeff();
  if (orbit.closure_residual > closure_tol * scale) {
    std::ostringstream os;
    os << "make_orbit: closure residual " << orbit.closure_residual
       << " exceeds tolerance";
    throw NumericalFailure(os.str());
  }
  orbit.minimal_period = period;
  orbit.multiplicity = 1;
  return orbit;
}

// Smallest divisor T/k of the period that closes the orbit within tol.
template <typename S>
MinimalPeriodRecord<S> minimal_period(const PeriodicOrbit<S>& orbit, S tol = S(1e-7)) {
  const auto& traj = orbit.samples;
  const S scale = S(1) + orbit.x0.cwiseAbs().maxCoeff();
  MinimalPeriodRecord<S> rec;
  rec.T_min = orbit.period;
  rec.multiplicity = 1;
  for (int k = 2; k <= 64; ++k) {
    const S tk = orbit.period / S(k);
    // All multiples of T/k must return to x0, not just the first.
    bool closed = true;
    for (int m = 1; m < k && closed; ++m) {
      const S res = traj.domain()
                        .phase_delta(traj.state(S(m) * tk), orbit.x0)
                        .cwiseAbs()
                        .maxCoeff();
      closed = res <= tol * scale;
    }
    if (closed) {
      rec.T_min = tk;
      rec.multiplicity = k;
    }
  }
  return rec;
}

// Newton shooting on (x, T) with a phase condition through the guess and
// optional energy pinning.  The closure equation uses the domain metric, so
// orbits winding a periodic coordinate close properly.
template <typename S>
PeriodicOrbit<S> find_periodic_orbit(const Hamiltonian<S>& h, const VecX<S>& guess_x,
                                     S guess_T,
                                     const OrbitSearchConfig<S>& cfg = OrbitSearchConfig<S>{}) {
  const int n = h.phase_dim();
  if (guess_x.size() != n)
    throw DimensionError("find_periodic_orbit: guess size does not match model");
  if (!(guess_T > S(0)))
    throw DimensionError("find_periodic_orbit: guess period must be positive");

  const VecX<S> phase_dir = hamiltonian_vector_field(h, guess_x);
  if (phase_dir.cwiseAbs().maxCoeff() < S(1e-14))
    throw HypothesisViolation("find_periodic_orbit: vector field vanishes at guess");

  VecX<S> x = guess_x;
  S period = guess_T;
  std::vector<S> history;
  bool degenerate = false;
  std::string warning;

  const S scale = S(1) + guess_x.cwiseAbs().maxCoeff();
  const int rows = n + 1 + (cfg.pin_energy ? 1 : 0);

  const auto residual_at = [&](const VecX<S>& xx, S tt) {
    const auto traj = integrate_flow(h, xx, {S(0), tt}, cfg.flow);
    VecX<S> ff(rows);
    ff.head(n) = h.domain().phase_delta(traj.state(tt), xx);
    ff[n] = phase_dir.dot(xx - guess_x);
    if (cfg.pin_energy) ff[n + 1] = h.value(xx) - cfg.energy;
    return ff;
  };

  S lambda = S(1e-8);
  for (int iter = 0; iter <= cfg.max_iters; ++iter) {
    const auto var = integrate_variational(h, x, {S(0), period}, cfg.flow);
    const VecX<S> x_end = var.state(period);

    VecX<S> f(rows);
    f.head(n) = h.domain().phase_delta(x_end, x);
    f[n] = phase_dir.dot(x - guess_x);
    if (cfg.pin_energy) f[n + 1] = h.value(x) - cfg.energy;

    const S res = f.cwiseAbs().maxCoeff();
    history.push_back(res);
    if (res <= cfg.tol * scale) {
      PeriodicOrbit<S> orbit = make_orbit(h, x, period, cfg.flow, S(10) * cfg.tol);
      orbit.residual_history = history;
      orbit.degenerate_warning = degenerate;
      orbit.warning = warning;
      const auto mp = minimal_period(orbit);
      orbit.minimal_period = mp.T_min;
      orbit.multiplicity = mp.multiplicity;
      return orbit;
    }
    if (iter == cfg.max_iters) break;

    MatX<S> jac = MatX<S>::Zero(rows, n + 1);
    jac.topLeftCorner(n, n) =
        var.transition(S(0), period) - MatX<S>::Identity(n, n);
    jac.block(0, n, n, 1) = hamiltonian_vector_field(h, x_end);
    jac.block(n, 0, 1, n) = phase_dir.transpose();
    if (cfg.pin_energy) jac.block(n + 1, 0, 1, n) = h.gradient(x).transpose();

    Eigen::ColPivHouseholderQR<MatX<S>> qr(jac);
    qr.setThreshold(S(1e-10));
    // Without energy pinning the conserved quantity removes one rank at any
    // closed orbit, so only a further drop signals real degeneracy.
    const int expected_rank = cfg.pin_energy ? n + 1 : n;
    if (qr.rank() < expected_rank) {
      degenerate = true;
      warning = "shooting Jacobian is rank deficient (eigenvalue-1 direction)";
    }

    // Damped step with accept/reject.  Closed orbits of an autonomous system
    // come in families, and the raw bordered solve can throw the iterate far
    // along the near-null family direction; damping keeps such drift bounded
    // while the shrinking residual restores the full step near the solution.
    const MatX<S> jtj = jac.transpose() * jac;
    const VecX<S> jtf = jac.transpose() * f;
    const S dscale = jtj.diagonal().maxCoeff();
    bool stepped = false;
    for (int trial = 0; trial < 60 && !stepped; ++trial) {
      MatX<S> m = jtj;
      m.diagonal().array() += (lambda + S(1e-14)) * dscale;
      const VecX<S> step = m.ldlt().solve(-jtf);
      const VecX<S> x_try = x + step.head(n);
      const S t_try = period + step[n];
      if (t_try > S(0)) {
        try {
          const S res_try = residual_at(x_try, t_try).cwiseAbs().maxCoeff();
          if (res_try < res) {
            x = x_try;
            period = t_try;
            lambda = std::max(lambda / S(4), S(1e-12));
            stepped = true;
          }
        } catch (const IntegrationFailure&) {
        } catch (const EvaluationError&) {
        }
      }
      if (!stepped) {
        lambda *= S(4);
        if (lambda > S(1e12)) break;
      }
    }
    if (!stepped) break;
  }

  std::ostringstream os;
  os << "find_periodic_orbit: no convergence in " << cfg.max_iters
     << " iterations; residuals:";
  for (S r : history) os << " " << r;
  throw ConvergenceFailure(os.str());
}

namespace detail {

// Projection distance between base points, respecting periodic coordinates.
template <typename S>
S base_distance(const Domain<S>& dom, const VecX<S>& qa, const VecX<S>& qb) {
  return dom.wrap_delta(qa, qb).norm();
}

}  // namespace detail

// Open maximal intervals of neat times over one minimal period.  A time is
// neat when the projected speed clears tol_speed and the projected point is
// isolated from the rest of the projected orbit: distance above
// tol_sep * diameter for all times further than tol_sep * T_min away (mod
// T_min).  tol_sep is dimensionless; tol_speed <= 0 selects 1e-6 * max speed.
template <typename S>
std::vector<TimeInterval<S>> neat_times(const PeriodicOrbit<S>& orbit,
                                        S tol_speed = S(-1), S tol_sep = S(1e-3),
                                        int grid = 2048) {
  const S T = orbit.minimal_period;
  const auto& traj = orbit.samples;
  const auto& dom = traj.domain();
  const int nb = static_cast<int>(orbit.x0.size()) / 2;

  std::vector<S> ts(grid);
  std::vector<VecX<S>> qs(grid);
  for (int i = 0; i < grid; ++i) {
    ts[i] = T * S(i) / S(grid);
    qs[i] = traj.state(ts[i]).head(nb);
  }

  // Diameter on a coarse subgrid.
  S diam = S(0);
  const int step = std::max(1, grid / 256);
  for (int i = 0; i < grid; i += step)
    for (int j = i + step; j < grid; j += step)
      diam = std::max(diam, detail::base_distance(dom, qs[i], qs[j]));
  if (diam <= S(0)) return {};  // stationary projection, nothing is neat

  const S h_fd = std::max(S(1e-6) * T, S(1e-9));
  const auto speed = [&](S t) {
    const S ta = std::max(traj.t0(), t - h_fd);
    const S tb = std::min(traj.t1(), t + h_fd);
    return ((traj.state(tb).head(nb) - traj.state(ta).head(nb)) / (tb - ta)).norm();
  };

  S max_speed = S(0);
  for (int i = 0; i < grid; i += step) max_speed = std::max(max_speed, speed(ts[i]));
  const S v_floor = tol_speed > S(0) ? tol_speed : S(1e-6) * max_speed;
  const S window = tol_sep * T;
  const S d_floor = tol_sep * diam;

  const auto neat = [&](S s) {
    s = std::fmod(s, T);
    if (s < S(0)) s += T;
    if (speed(s) <= v_floor) return false;
    const VecX<S> qsample = traj.state(s).head(nb);
    for (int j = 0; j < grid; ++j) {
      S dt = std::abs(ts[j] - s);
      dt = std::min(dt, T - dt);
      if (dt < window) continue;
      if (detail::base_distance(dom, qsample, qs[j]) <= d_floor) return false;
    }
    return true;
  };

  std::vector<bool> flag(grid);
  for (int i = 0; i < grid; ++i) flag[i] = neat(ts[i]);

  const bool all = std::all_of(flag.begin(), flag.end(), [](bool b) { return b; });
  const bool none = std::none_of(flag.begin(), flag.end(), [](bool b) { return b; });
  if (none) return {};
  if (all) return {TimeInterval<S>{S(0), T}};

  // Rotate the start to a non-neat sample so runs do not wrap.
  int start = 0;
  while (flag[start]) ++start;

  const auto refine = [&](S inside, S outside) {
    for (int it = 0; it < 40; ++it) {
      const S mid = (inside + outside) / 2;
      (neat(mid) ? inside : outside) = mid;
    }
    return (inside + outside) / 2;
  };

  std::vector<TimeInterval<S>> out;
  int i = 0;
  while (i < grid) {
    const int gi = (start + i) % grid;
    if (!flag[gi]) {
      ++i;
      continue;
    }
    int j = i;
    while (j < grid && flag[(start + j) % grid]) ++j;
    const S t_first = ts[start] + T * S(i) / S(grid);
    const S t_last = ts[start] + T * S(j - 1) / S(grid);
    const S a = refine(t_first, t_first - T / S(grid));
    const S b = refine(t_last, t_last + T / S(grid));
    S lo = std::fmod(a + T, T), hi = lo + (b - a);
    out.push_back(TimeInterval<S>{lo, hi});
    i = j;
  }
  std::sort(out.begin(), out.end(),
            [](const TimeInterval<S>& u, const TimeInterval<S>& v) { return u.a < v.a; });
  return out;
}

// Symplectic basis of the section-restricted iso-energetic plane at a point.
template <typename S>
struct SectionFrame {
  S t0 = S(0);
  VecX<S> x0;      // anchor phase point
  VecX<S> normal;  // section covector; section = {normal . (x - x0) = 0}
  MatX<S> basis;   // 2(d+1) x 2d, Gram matrix of the form equals J_2d

  S section_value(const VecX<S>& x, const Domain<S>& dom) const {
    const int nb = static_cast<int>(x0.size()) / 2;
    VecX<S> delta(x.size());
    delta.head(nb) = dom.wrap_delta(x.head(nb), x0.head(nb));
    delta.tail(nb) = x.tail(nb) - x0.tail(nb);
    return normal.dot(delta);
  }
};

template <typename S>
SectionFrame<S> make_section_frame(const Hamiltonian<S>& h, const VecX<S>& x0,
                                   const VecX<S>& normal, S t0 = S(0)) {
  const int n = h.phase_dim();
  if (x0.size() != n || normal.size() != n)
    throw DimensionError("make_section_frame: size mismatch");
  const VecX<S> dh = h.gradient(x0);
  const VecX<S> xf = hamiltonian_vector_field(h, x0);
  const S trans = std::abs(normal.dot(xf));
  if (trans <= S(1e-12) * (S(1) + normal.norm() * xf.norm()))
    throw HypothesisViolation("make_section_frame: section tangent to the flow");
  if (dh.norm() <= S(1e-14))
    throw HypothesisViolation("make_section_frame: dH vanishes at the anchor");

  MatX<S> rows(2, n);
  rows.row(0) = dh.transpose();
  rows.row(1) = normal.transpose();
  Eigen::FullPivLU<MatX<S>> lu(rows);
  lu.setThreshold(S(1e-12));
  MatX<S> kern = lu.kernel();
  if (kern.cols() != n - 2)
    throw HypothesisViolation("make_section_frame: dH and the normal are parallel");

  // Symplectic Gram-Schmidt into d pairs.
  const MatX<S> j = standard_symplectic_form<S>(n / 2);
  const int d = (n - 2) / 2;
  std::vector<VecX<S>> pool;
  for (int c = 0; c < kern.cols(); ++c) pool.push_back(kern.col(c));
  std::vector<VecX<S>> es, fs;
  while (!pool.empty()) {
    VecX<S> e = pool.front();
    pool.erase(pool.begin());
    e.normalize();
    int best = -1;
    S best_val = S(0);
    for (size_t k = 0; k < pool.size(); ++k) {
      const S w = e.dot(j * pool[k]);
      if (std::abs(w) > std::abs(best_val)) {
        best_val = w;
        best = static_cast<int>(k);
      }
    }
    if (best < 0 || std::abs(best_val) < S(1e-12))
      throw NumericalFailure("make_section_frame: restricted form is degenerate");
    VecX<S> f = pool[best] / best_val;
    pool.erase(pool.begin() + best);
    for (auto& c : pool) {
      const S cf = c.dot(j * f);
      const S ce = c.dot(j * e);
      c = c - cf * e + ce * f;
    }
    es.push_back(e);
    fs.push_back(f);
  }

  SectionFrame<S> frame;
  frame.t0 = t0;
  frame.x0 = x0;
  frame.normal = normal;
  frame.basis.resize(n, 2 * d);
  for (int k = 0; k < d; ++k) {
    frame.basis.col(k) = es[k];
    frame.basis.col(d + k) = fs[k];
  }
  const MatX<S> gram = frame.basis.transpose() * j * frame.basis;
  const MatX<S> j2 = standard_symplectic_form<S>(d);
  if ((gram - j2).cwiseAbs().maxCoeff() > S(1e-10))
    throw NumericalFailure("make_section_frame: frame Gram matrix is not J");
  return frame;
}

// Anchor frame with the section orthogonal to the projected velocity.
template <typename S>
SectionFrame<S> make_section_frame(const Hamiltonian<S>& h, const PeriodicOrbit<S>& orbit,
                                   S t0) {
  const VecX<S> x0 = orbit.samples.state(t0);
  const int nb = static_cast<int>(x0.size()) / 2;
  const VecX<S> qdot = hamiltonian_vector_field(h, x0).head(nb);
  if (qdot.norm() <= S(1e-12))
    throw HypothesisViolation("make_section_frame: projected velocity vanishes");
  VecX<S> normal = VecX<S>::Zero(2 * nb);
  normal.head(nb) = qdot.normalized();
  return make_section_frame(h, x0, normal, t0);
}

// Restricted linearized return map over one minimal period of H (+ u).
template <typename S>
SympMatrix<S> restricted_return_map(const Hamiltonian<S>& h, const PeriodicOrbit<S>& orbit,
                                    const SectionFrame<S>& frame,
                                    const PotentialField<S>& u = PotentialField<S>{},
                                    const FlowConfig<S>& flow = FlowConfig<S>{}) {
  const bool with_u = u.domain().base_dim > 0;
  const Hamiltonian<S> heff = with_u ? add_potential(h, u) : h;
  const int n = h.phase_dim();
  const int d = n / 2 - 1;

  const VecX<S> dp = heff.gradient(frame.x0).tail(n / 2);
  if (dp.norm() <= S(1e-12))
    throw HypothesisViolation("restricted_return_map: fiber derivative vanishes at anchor");

  const auto var =
      integrate_variational(heff, frame.x0, {frame.t0, frame.t0 + orbit.minimal_period}, flow);
  const MatX<S> phi = var.transition(frame.t0, frame.t0 + orbit.minimal_period);

  const VecX<S> x_end = var.state(frame.t0 + orbit.minimal_period);
  const VecX<S> xf = hamiltonian_vector_field(heff, x_end);
  const S nx = frame.normal.dot(xf);
  if (std::abs(nx) <= S(1e-12) * (S(1) + frame.normal.norm() * xf.norm()))
    throw HypothesisViolation("restricted_return_map: section tangency at return");

  const MatX<S> j_full = standard_symplectic_form<S>(n / 2);
  const MatX<S> j_red = standard_symplectic_form<S>(d);

  MatX<S> out(2 * d, 2 * d);
  for (int k = 0; k < 2 * d; ++k) {
    VecX<S> w = phi * frame.basis.col(k);
    w -= xf * (frame.normal.dot(w) / nx);  // re-land on the section
    // Coefficients in the frame basis through the symplectic pairing; the
    // flow-direction and energy-gradient components pair to zero.
    out.col(k) = -j_red * frame.basis.transpose() * j_full * w;
  }
  return SympMatrix<S>(out, S(1e-6));
}

template <typename S>
struct NondegeneracyRecord {
  bool verdict = false;
  S distance_to_1 = S(0);
};

template <typename S>
NondegeneracyRecord<S> orbit_nondegenerate(const SympMatrix<S>& l, S tol = S(1e-6)) {
  Eigen::EigenSolver<MatX<S>> es(l.value());
  S dist = std::numeric_limits<S>::infinity();
  for (int i = 0; i < es.eigenvalues().size(); ++i)
    dist = std::min(dist, std::abs(es.eigenvalues()[i] - std::complex<S>(1, 0)));
  return NondegeneracyRecord<S>{dist > tol, dist};
}

template <typename S>
struct SigmaCrossing {
  S t = S(0);        // refined crossing (or near-zero) time
  S det_at = S(0);   // determinant at t
  S t_lo = S(0), t_hi = S(0);
  S det_lo = S(0), det_hi = S(0);  // bracketing values, det_lo * det_hi <= 0
};

// Zero-crossing scan of the bordered determinant along a trajectory.
template <typename S>
std::vector<SigmaCrossing<S>> sigma_scan(const Hamiltonian<S>& h, const Trajectory<S>& traj,
                                         S tol = S(-1), int subdiv = 4) {
  std::vector<SigmaCrossing<S>> out;
  const auto det_at = [&](S t) {
    return fiberwise_iso_energetic_test(h, VecX<S>(traj.state(t))).det_value;
  };
  const auto& ts = traj.times();
  S t_prev = traj.t0();
  S d_prev = det_at(t_prev);
  S abs_scale = std::abs(d_prev);

  struct GridPoint {
    S t, d;
  };
  std::vector<GridPoint> pts;
  pts.push_back({t_prev, d_prev});
  for (size_t i = 0; i + 1 < ts.size(); ++i)
    for (int k = 1; k <= subdiv; ++k) {
      const S t = ts[i] + (ts[i + 1] - ts[i]) * S(k) / S(subdiv);
      const S d = det_at(t);
      abs_scale = std::max(abs_scale, std::abs(d));
      pts.push_back({t, d});
    }
  const S near_zero = tol > S(0) ? tol : S(1e-8) * (S(1) + abs_scale);

  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    const auto [ta, da] = pts[i];
    const auto [tb, db] = pts[i + 1];
    if ((da < S(0) && db >= S(0)) || (da > S(0) && db <= S(0))) {
      S lo = ta, hi = tb, dlo = da, dhi = db;
      for (int it = 0; it < 100 && (hi - lo) > S(1e-14) * (S(1) + std::abs(lo)); ++it) {
        const S mid = (lo + hi) / 2;
        const S dm = det_at(mid);
        if ((dlo < S(0)) == (dm < S(0))) {
          lo = mid;
          dlo = dm;
        } else {
          hi = mid;
          dhi = dm;
        }
      }
      SigmaCrossing<S> c;
      c.t = (lo + hi) / 2;
      c.det_at = det_at(c.t);
      c.t_lo = lo;
      c.t_hi = hi;
      c.det_lo = dlo;
      c.det_hi = dhi;
      out.push_back(c);
    } else if (i > 0 && std::abs(da) < near_zero && std::abs(da) <= std::abs(pts[i - 1].d) &&
               std::abs(da) <= std::abs(db) && pts[i - 1].d * db > S(0)) {
      // Local near-zero without sign change (grazing).
      SigmaCrossing<S> c;
      c.t = ta;
      c.det_at = da;
      c.t_lo = c.t_hi = ta;
      c.det_lo = c.det_hi = da;
      out.push_back(c);
    }
  }
  return out;
}

template <typename S>
struct OrbitReport {
  S energy = S(0);
  S minimal_period = S(0);
  int multiplicity = 1;
  std::vector<TimeInterval<S>> neat_intervals;
  std::vector<SigmaCrossing<S>> sigma_crossings;
  S min_abs_det = S(0);
  std::vector<TimeInterval<S>> joint_intervals;  // neat AND fiberwise non-degenerate
  bool perturbable = false;
  std::optional<MatX<S>> return_map;
  NondegeneracyRecord<S> nondegeneracy;
  std::string notes;
};

// Joint test of the perturbation hypotheses along the orbit: neat time and
// fiberwise iso-energetic non-degeneracy at the same parameter.
template <typename S>
OrbitReport<S> classify_orbit(const Hamiltonian<S>& h, const PeriodicOrbit<S>& orbit,
                              int grid = 1024) {
  OrbitReport<S> rep;
  rep.energy = orbit.energy;
  rep.minimal_period = orbit.minimal_period;
  rep.multiplicity = orbit.multiplicity;
  rep.neat_intervals = neat_times(orbit);
  rep.sigma_crossings = sigma_scan(h, orbit.samples);

  const S T = orbit.minimal_period;
  rep.min_abs_det = std::numeric_limits<S>::infinity();
  std::vector<bool> joint(grid);
  const auto in_neat = [&](S t) {
    for (const auto& iv : rep.neat_intervals) {
      // A full-circle interval covers the seam point as well.
      if (iv.length() >= T * (S(1) - S(1e-12))) return true;
      if (iv.contains(t) || iv.contains(t + T) || iv.contains(t - T)) return true;
    }
    return false;
  };
  for (int i = 0; i < grid; ++i) {
    const S t = T * S(i) / S(grid);
    const auto fw = fiberwise_iso_energetic_test(h, VecX<S>(orbit.samples.state(t)));
    rep.min_abs_det = std::min(rep.min_abs_det, std::abs(fw.det_value));
    joint[i] = fw.non_degenerate && in_neat(t);
  }

  // Assemble joint intervals from the grid indicator.
  const bool all = std::all_of(joint.begin(), joint.end(), [](bool b) { return b; });
  const bool none = std::none_of(joint.begin(), joint.end(), [](bool b) { return b; });
  if (all) {
    rep.joint_intervals.push_back(TimeInterval<S>{S(0), T});
  } else if (!none) {
    int start = 0;
    while (joint[start]) ++start;
    int i = 0;
    while (i < grid) {
      const int gi = (start + i) % grid;
      if (!joint[gi]) {
        ++i;
        continue;
      }
      int j = i;
      while (j < grid && joint[(start + j) % grid]) ++j;
      const S a = std::fmod(T * S(start) / S(grid) + T * S(i) / S(grid), T);
      rep.joint_intervals.push_back(TimeInterval<S>{a, a + T * S(j - i) / S(grid)});
      i = j;
    }
  }
  rep.perturbable = !rep.joint_intervals.empty();

  if (rep.perturbable) {
    // Return map anchored in the widest joint window.
    const auto widest = std::max_element(
        rep.joint_intervals.begin(), rep.joint_intervals.end(),
        [](const TimeInterval<S>& u, const TimeInterval<S>& v) {
          return u.length() < v.length();
        });
    const S t0 = std::fmod((widest->a + widest->b) / 2 + T, T);
    try {
      const auto frame = make_section_frame(h, orbit, t0);
      const auto l = restricted_return_map(h, orbit, frame);
      rep.return_map = l.value();
      rep.nondegeneracy = orbit_nondegenerate(l);
    } catch (const std::exception& e) {
      rep.notes = std::string("return map unavailable: ") + e.what();
    }
  } else {
    rep.notes = rep.neat_intervals.empty() ? "no neat times" : "degeneracy locus meets the orbit";
  }
  return rep;
}

}  // namespace manekit
