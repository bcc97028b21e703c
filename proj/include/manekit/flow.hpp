#pragma once

// Hamiltonian flow, variational (linearized) flow, section-crossing detection.

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <manekit/geometry.hpp>
#include <manekit/hamiltonian.hpp>
#include <manekit/ode.hpp>

namespace manekit {

template <typename S>
struct FlowConfig {
  S rel_tol = S(1e-10);
  S abs_tol = S(1e-12);
  S max_step = std::numeric_limits<S>::infinity();
  bool dense_output = true;

  void validate() const {
    if (!(rel_tol > S(0)) || rel_tol > S(1e-2))
      throw DimensionError("FlowConfig: rel_tol must lie in (0, 1e-2]");
    if (!(abs_tol > S(0)) || abs_tol > S(1e-2))
      throw DimensionError("FlowConfig: abs_tol must lie in (0, 1e-2]");
    if (!(max_step > S(0))) throw DimensionError("FlowConfig: max_step must be positive");
  }

  OdeOptions<S> ode() const {
    OdeOptions<S> o;
    o.rel_tol = rel_tol;
    o.abs_tol = abs_tol;
    o.max_step = max_step;
    return o;
  }
};

// Step-size underflow along a flow; carries the last accepted phase point.
template <typename S>
class FlowBreakdown : public IntegrationFailure {
 public:
  FlowBreakdown(const std::string& msg, S t, VecX<S> x)
      : IntegrationFailure(msg), t_last(t), x_last(std::move(x)) {}
  S t_last;
  VecX<S> x_last;
};

template <typename S>
class Trajectory {
 public:
  Trajectory() = default;

  Trajectory(Domain<S> dom, OdeSolution<S> sol, S energy_ref, S drift)
      : domain_(std::move(dom)),
        sol_(std::move(sol)),
        energy_ref_(energy_ref),
        drift_(drift) {
    check_times();
  }

  // Interpolating trajectory through externally produced samples (used by the
  // degeneracy scan over synthetic curves).  Node derivatives come from
  // centered differences, interior accuracy is cubic.
  static Trajectory from_samples(const std::vector<S>& ts, const std::vector<VecX<S>>& xs,
                                 S energy_ref = std::numeric_limits<S>::quiet_NaN()) {
    if (ts.size() != xs.size() || ts.size() < 2)
      throw DimensionError("Trajectory::from_samples: need matching lists, length >= 2");
    OdeSolution<S> sol;
    sol.ts = ts;
    sol.ys = xs;
    sol.fs.resize(ts.size());
    const int m = static_cast<int>(ts.size());
    for (int i = 0; i < m; ++i) {
      if (i == 0 && m >= 3) {
        // Second-order one-sided slopes at the ends.
        const S h1 = ts[1] - ts[0], h2 = ts[2] - ts[0];
        sol.fs[0] = (xs[1] - xs[0]) * (h2 / (h1 * (h2 - h1))) -
                    (xs[2] - xs[0]) * (h1 / (h2 * (h2 - h1)));
      } else if (i == m - 1 && m >= 3) {
        const S h1 = ts[m - 1] - ts[m - 2], h2 = ts[m - 1] - ts[m - 3];
        sol.fs[m - 1] = (xs[m - 1] - xs[m - 2]) * (h2 / (h1 * (h2 - h1))) -
                        (xs[m - 1] - xs[m - 3]) * (h1 / (h2 * (h2 - h1)));
      } else {
        const int a = std::max(0, i - 1), b = std::min(m - 1, i + 1);
        sol.fs[i] = (xs[b] - xs[a]) / (ts[b] - ts[a]);
      }
    }
    Trajectory traj;
    traj.domain_ = Domain<S>::euclidean(static_cast<int>(xs[0].size()) / 2);
    traj.sol_ = std::move(sol);
    traj.energy_ref_ = energy_ref;
    traj.drift_ = std::numeric_limits<S>::quiet_NaN();
    traj.check_times();
    return traj;
  }

  S t0() const { return sol_.ts.front(); }
  S t1() const { return sol_.ts.back(); }
  const std::vector<S>& times() const { return sol_.ts; }
  const std::vector<VecX<S>>& states() const { return sol_.ys; }
  const std::vector<VecX<S>>& derivatives() const { return sol_.fs; }
  const Domain<S>& domain() const { return domain_; }
  const OdeSolution<S>& solution() const { return sol_; }

  VecX<S> state(S t) const { return sol_.eval(t); }

  S energy_reference() const { return energy_ref_; }
  S energy_drift() const { return drift_; }

 private:
  void check_times() const {
    for (size_t i = 1; i < sol_.ts.size(); ++i)
      if (!(sol_.ts[i] > sol_.ts[i - 1]))
        throw DimensionError("Trajectory: times are not strictly increasing");
  }

  Domain<S> domain_;
  OdeSolution<S> sol_;
  S energy_ref_ = std::numeric_limits<S>::quiet_NaN();
  S drift_ = std::numeric_limits<S>::quiet_NaN();
};

template <typename S>
Trajectory<S> integrate_flow(const Hamiltonian<S>& h, const VecX<S>& x0,
                             std::pair<S, S> t_span, const FlowConfig<S>& cfg) {
  cfg.validate();
  if (x0.size() != h.phase_dim())
    throw DimensionError("integrate_flow: state size does not match model");
  const auto rhs = [&h](S, const VecX<S>& y) { return hamiltonian_vector_field(h, y); };
  OdeSolution<S> sol;
  try {
    sol = dopri5(rhs, x0, t_span.first, t_span.second, cfg.ode(), cfg.dense_output);
  } catch (const OdeUnderflow<S>& e) {
    throw FlowBreakdown<S>(e.what(), e.t_last, e.y_last);
  }
  const S e0 = h.value(x0);
  S drift = S(0);
  for (const auto& y : sol.ys) drift = std::max(drift, std::abs(h.value(y) - e0));
  return Trajectory<S>(h.domain(), std::move(sol), e0, drift);
}

template <typename S>
Trajectory<S> integrate_flow(const Hamiltonian<S>& h, const PhasePoint<S>& x0,
                             std::pair<S, S> t_span, const FlowConfig<S>& cfg) {
  x0.validate();
  return integrate_flow(h, x0.to_vector(), t_span, cfg);
}

// Base flow with its fundamental matrix solution, integrated jointly.
template <typename S>
class VariationalTrajectory {
 public:
  VariationalTrajectory() = default;
  VariationalTrajectory(Trajectory<S> base, OdeSolution<S> joint, int phase_dim)
      : base_(std::move(base)), joint_(std::move(joint)), n_(phase_dim) {}

  const Trajectory<S>& base() const { return base_; }
  S t0() const { return base_.t0(); }
  S t1() const { return base_.t1(); }
  VecX<S> state(S t) const { return base_.state(t); }

  // Fundamental solution relative to the initial time.
  MatX<S> fundamental(S t) const {
    const VecX<S> y = joint_.eval(t);
    return Eigen::Map<const MatX<S>>(y.data() + n_, n_, n_);
  }

  // transition(s, t) maps tangent vectors at time s to time t.
  MatX<S> transition(S s, S t) const {
    if (s == t) return MatX<S>::Identity(n_, n_);
    const MatX<S> phi_t = fundamental(t);
    const MatX<S> phi_s = fundamental(s);
    // Symplectic inverse of phi_s keeps the cocycle residual near rounding.
    const MatX<S> j = standard_symplectic_form<S>(n_ / 2);
    return phi_t * (-j * phi_s.transpose() * j);
  }

 private:
  Trajectory<S> base_;
  OdeSolution<S> joint_;
  int n_ = 0;
};

template <typename S>
VariationalTrajectory<S> integrate_variational(const Hamiltonian<S>& h, const VecX<S>& x0,
                                               std::pair<S, S> t_span,
                                               const FlowConfig<S>& cfg) {
  cfg.validate();
  const int n = h.phase_dim();
  if (x0.size() != n)
    throw DimensionError("integrate_variational: state size does not match model");
  const MatX<S> j = standard_symplectic_form<S>(n / 2);

  VecX<S> y0(n + n * n);
  y0.head(n) = x0;
  Eigen::Map<MatX<S>>(y0.data() + n, n, n) = MatX<S>::Identity(n, n);

  const auto rhs = [&h, &j, n](S, const VecX<S>& y) {
    VecX<S> dy(y.size());
    const VecX<S> x = y.head(n);
    const VecX<S> g = h.gradient(x);
    dy.head(n / 2) = g.tail(n / 2);
    dy.segment(n / 2, n / 2) = -g.head(n / 2);
    const MatX<S> w = j * h.hessian(x);
    Eigen::Map<const MatX<S>> phi(y.data() + n, n, n);
    Eigen::Map<MatX<S>>(dy.data() + n, n, n) = w * phi;
    return dy;
  };

  OdeSolution<S> joint;
  try {
    joint = dopri5(rhs, y0, t_span.first, t_span.second, cfg.ode(), cfg.dense_output);
  } catch (const OdeUnderflow<S>& e) {
    throw FlowBreakdown<S>(e.what(), e.t_last, VecX<S>(e.y_last.head(n)));
  }

  // Slice the base trajectory out of the joint solution; the polynomial
  // pieces restrict exactly.
  OdeSolution<S> base;
  base.ts = joint.ts;
  base.ys.reserve(joint.ys.size());
  base.fs.reserve(joint.fs.size());
  for (const auto& y : joint.ys) base.ys.push_back(y.head(n));
  for (const auto& f : joint.fs) base.fs.push_back(f.head(n));
  base.segments.reserve(joint.segments.size());
  for (const auto& seg : joint.segments) {
    OdeSegment<S> s;
    s.t0 = seg.t0;
    s.h = seg.h;
    s.y0 = seg.y0.head(n);
    for (int m = 0; m < 4; ++m) s.d[m] = seg.d[m].head(n);
    base.segments.push_back(std::move(s));
  }

  const S e0 = h.value(x0);
  S drift = S(0);
  for (const auto& y : base.ys) drift = std::max(drift, std::abs(h.value(y) - e0));
  Trajectory<S> base_traj(h.domain(), std::move(base), e0, drift);
  return VariationalTrajectory<S>(std::move(base_traj), std::move(joint), n);
}

enum class CrossingDirection { Positive, Negative, Both };

template <typename S>
struct SectionHit {
  S time;
  VecX<S> state;
};

// Sign-change bracketing on a refined grid over the dense output, then
// bisection down to rounding.  Direction refers to the sign of d(section)/dt
// at the crossing: Positive means the section value goes - to +.
template <typename S, typename F>
std::vector<SectionHit<S>> section_crossing(const Trajectory<S>& traj, F&& section,
                                            CrossingDirection dir = CrossingDirection::Both,
                                            int subdiv = 8) {
  std::vector<SectionHit<S>> hits;
  const auto& ts = traj.times();
  const S span = traj.t1() - traj.t0();
  S t_prev = traj.t0();
  S s_prev = section(traj.state(t_prev));
  const S dedup = S(1e-12) * (S(1) + std::abs(span));

  for (size_t i = 0; i + 1 < ts.size(); ++i) {
    for (int k = 1; k <= subdiv; ++k) {
      const S t = ts[i] + (ts[i + 1] - ts[i]) * S(k) / S(subdiv);
      const S s = section(traj.state(t));
      if ((s_prev < S(0) && s >= S(0)) || (s_prev > S(0) && s <= S(0))) {
        const bool upward = s_prev < S(0);
        const bool keep = dir == CrossingDirection::Both ||
                          (dir == CrossingDirection::Positive && upward) ||
                          (dir == CrossingDirection::Negative && !upward);
        if (keep) {
          S a = t_prev, b = t;
          S sa = s_prev;
          for (int it = 0; it < 200 && (b - a) > S(4) * std::numeric_limits<S>::epsilon() *
                                                      (S(1) + std::abs(a));
               ++it) {
            const S mid = (a + b) / 2;
            const S sm = section(traj.state(mid));
            if ((sa < S(0)) == (sm < S(0))) {
              a = mid;
              sa = sm;
            } else {
              b = mid;
            }
          }
          const S t_star = (a + b) / 2;
          if (hits.empty() || std::abs(t_star - hits.back().time) > dedup)
            hits.push_back({t_star, traj.state(t_star)});
        }
      }
      t_prev = t;
      s_prev = s;
    }
  }
  return hits;
}

// Tab-separated (t, q, p) table with n_samples evenly spaced rows.
template <typename S>
void export_trajectory_tsv(const Trajectory<S>& traj, const std::string& path,
                           int n_samples = 0) {
  std::ofstream out(path);
  if (!out) throw EvaluationError("export_trajectory_tsv: cannot open " + path);
  out.precision(17);
  const int n = traj.states().front().size() / 2;
  out << "# t";
  for (int i = 1; i <= n; ++i) out << "\tq" << i;
  for (int i = 1; i <= n; ++i) out << "\tp" << i;
  out << "\n";
  const auto row = [&](S t, const VecX<S>& x) {
    out << t;
    for (int i = 0; i < 2 * n; ++i) out << "\t" << x[i];
    out << "\n";
  };
  if (n_samples <= 0) {
    for (size_t i = 0; i < traj.times().size(); ++i)
      row(traj.times()[i], traj.states()[i]);
  } else {
    for (int i = 0; i < n_samples; ++i) {
      const S t = traj.t0() + (traj.t1() - traj.t0()) * S(i) / S(std::max(1, n_samples - 1));
      row(t, traj.state(t));
    }
  }
}

}  // namespace manekit
