#pragma once

// Adaptive Dormand-Prince 5(4) with quartic dense output.  Symplecticity of
// Hamiltonian flows is monitored downstream, not enforced here.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include <manekit/types.hpp>

namespace manekit {

template <typename S>
struct OdeOptions {
  S rel_tol = S(1e-10);
  S abs_tol = S(1e-12);
  S max_step = std::numeric_limits<S>::infinity();
  long max_steps = 10'000'000;
};

// Step-size underflow; carries the last accepted state.
template <typename S>
class OdeUnderflow : public IntegrationFailure {
 public:
  OdeUnderflow(const std::string& msg, S t, VecX<S> y)
      : IntegrationFailure(msg), t_last(t), y_last(std::move(y)) {}
  S t_last;
  VecX<S> y_last;
};

// One accepted step: y(t0 + theta*h) = y0 + sum_m theta^m d[m].
template <typename S>
struct OdeSegment {
  S t0 = S(0);
  S h = S(0);
  VecX<S> y0;
  std::array<VecX<S>, 4> d;

  VecX<S> eval(S t) const {
    const S theta = (t - t0) / h;
    return y0 + theta * (d[0] + theta * (d[1] + theta * (d[2] + theta * d[3])));
  }
};

template <typename S>
struct OdeSolution {
  std::vector<S> ts;               // ascending
  std::vector<VecX<S>> ys;         // states at ts
  std::vector<VecX<S>> fs;         // derivatives at ts
  std::vector<OdeSegment<S>> segments;  // ascending by interval, may be empty

  S t_begin() const { return ts.front(); }
  S t_end() const { return ts.back(); }

  VecX<S> eval(S t) const {
    const S lo = ts.front(), hi = ts.back();
    const S slack = S(1e-9) * (S(1) + hi - lo);
    if (t < lo - slack || t > hi + slack)
      throw EvaluationError("OdeSolution::eval: time outside the solution range");
    t = std::clamp(t, lo, hi);
    if (!segments.empty()) {
      // Segment k covers [ts[k], ts[k+1]].
      const auto it = std::upper_bound(ts.begin(), ts.end(), t);
      size_t k = static_cast<size_t>(std::distance(ts.begin(), it));
      k = k == 0 ? 0 : k - 1;
      if (k >= segments.size()) k = segments.size() - 1;
      return segments[k].eval(t);
    }
    // Cubic Hermite from node values and derivatives.
    const auto it = std::upper_bound(ts.begin(), ts.end(), t);
    size_t k = static_cast<size_t>(std::distance(ts.begin(), it));
    k = k == 0 ? 1 : k;
    if (k >= ts.size()) k = ts.size() - 1;
    const S ta = ts[k - 1], tb = ts[k];
    const S h = tb - ta, u = (t - ta) / h;
    const VecX<S>&ya = ys[k - 1], &yb = ys[k], &ma = fs[k - 1], &mb = fs[k];
    const S u2 = u * u, u3 = u2 * u;
    return (2 * u3 - 3 * u2 + 1) * ya + (u3 - 2 * u2 + u) * h * ma +
           (-2 * u3 + 3 * u2) * yb + (u3 - u2) * h * mb;
  }
};

namespace detail {

template <typename S>
struct Dopri5Tableau {
  // Dormand-Prince coefficients.
  static constexpr S c2 = S(1) / 5, c3 = S(3) / 10, c4 = S(4) / 5, c5 = S(8) / 9;
  static constexpr S a21 = S(1) / 5;
  static constexpr S a31 = S(3) / 40, a32 = S(9) / 40;
  static constexpr S a41 = S(44) / 45, a42 = S(-56) / 15, a43 = S(32) / 9;
  static constexpr S a51 = S(19372) / 6561, a52 = S(-25360) / 2187,
                     a53 = S(64448) / 6561, a54 = S(-212) / 729;
  static constexpr S a61 = S(9017) / 3168, a62 = S(-355) / 33,
                     a63 = S(46732) / 5247, a64 = S(49) / 176,
                     a65 = S(-5103) / 18656;
  static constexpr S b1 = S(35) / 384, b3 = S(500) / 1113, b4 = S(125) / 192,
                     b5 = S(-2187) / 6784, b6 = S(11) / 84;
  static constexpr S e1 = S(71) / 57600, e3 = S(-71) / 16695, e4 = S(71) / 1920,
                     e5 = S(-17253) / 339200, e6 = S(22) / 525, e7 = S(-1) / 40;
  // Dense-output weights: column m gives the theta^{m+1} contribution.
  static constexpr S p[7][4] = {
      {S(1), S(-8048581381.0) / 2820520608.0, S(8663915743.0) / 2820520608.0,
       S(-12715105075.0) / 11282082432.0},
      {S(0), S(0), S(0), S(0)},
      {S(0), S(131558114200.0) / 32700410799.0, S(-68118460800.0) / 10900136933.0,
       S(87487479700.0) / 32700410799.0},
      {S(0), S(-1754552775.0) / 470086768.0, S(14199869525.0) / 1410260304.0,
       S(-10690763975.0) / 1880347072.0},
      {S(0), S(127303824393.0) / 49829197408.0, S(-318862633887.0) / 49829197408.0,
       S(701980252875.0) / 199316789632.0},
      {S(0), S(-282668133.0) / 205662961.0, S(2019193451.0) / 616988883.0,
       S(-1453857185.0) / 822651844.0},
      {S(0), S(40617522.0) / 29380423.0, S(-110615467.0) / 29380423.0,
       S(69997945.0) / 29380423.0}};
};

template <typename S>
S error_norm(const VecX<S>& err, const VecX<S>& y0, const VecX<S>& y1, S rtol, S atol) {
  if (!all_finite(err) || !all_finite(y1)) return std::numeric_limits<S>::infinity();
  S acc = S(0);
  for (int i = 0; i < err.size(); ++i) {
    const S sc = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const S r = err[i] / sc;
    acc += r * r;
  }
  return std::sqrt(acc / S(err.size()));
}

}  // namespace detail

// Integrates y' = f(t, y) from t0 to t1 (either direction).  With
// want_dense the solution carries per-step quartic interpolants; otherwise
// evaluation between nodes falls back to Hermite interpolation.
template <typename S, typename RHS>
OdeSolution<S> dopri5(RHS&& f, const VecX<S>& y0, S t0, S t1, const OdeOptions<S>& opt,
                      bool want_dense = true) {
  using T = detail::Dopri5Tableau<S>;
  if (!(t1 != t0)) throw DimensionError("dopri5: empty time span");
  if (!all_finite(y0)) throw EvaluationError("dopri5: non-finite initial state");

  const S dir = t1 > t0 ? S(1) : S(-1);
  const S span = std::abs(t1 - t0);

  OdeSolution<S> sol;
  sol.ts.push_back(t0);
  sol.ys.push_back(y0);

  VecX<S> y = y0;
  S t = t0;
  VecX<S> k1 = f(t, y);
  if (!all_finite(k1)) throw EvaluationError("dopri5: non-finite derivative at start");
  sol.fs.push_back(k1);

  // Initial step from the relative sizes of the state and its derivative.
  S h;
  {
    const S ny = S(1) + y.template lpNorm<Eigen::Infinity>();
    const S nf = S(1) + k1.template lpNorm<Eigen::Infinity>();
    h = std::min({S(0.01) * ny / nf, span / 10, opt.max_step});
    h = std::max(h, span * S(1e-10));
    h *= dir;
  }

  const S eps = std::numeric_limits<S>::epsilon();
  long steps = 0;
  while ((t1 - t) * dir > S(0)) {
    if (++steps > opt.max_steps)
      throw NumericalFailure("dopri5: step budget exhausted");
    bool final_step = false;
    if ((t + h - t1) * dir > S(0)) {
      h = t1 - t;
      final_step = true;
    }
    const S h_min = 16 * eps * std::max({std::abs(t), std::abs(t1), S(1)});
    if (std::abs(h) < h_min) {
      std::ostringstream os;
      os << "dopri5: step size underflow at t = " << t;
      throw OdeUnderflow<S>(os.str(), t, y);
    }

    const VecX<S> k2 = f(t + T::c2 * h, y + h * (T::a21 * k1));
    const VecX<S> k3 = f(t + T::c3 * h, y + h * (T::a31 * k1 + T::a32 * k2));
    const VecX<S> k4 = f(t + T::c4 * h, y + h * (T::a41 * k1 + T::a42 * k2 + T::a43 * k3));
    const VecX<S> k5 =
        f(t + T::c5 * h, y + h * (T::a51 * k1 + T::a52 * k2 + T::a53 * k3 + T::a54 * k4));
    const VecX<S> k6 = f(
        t + h, y + h * (T::a61 * k1 + T::a62 * k2 + T::a63 * k3 + T::a64 * k4 + T::a65 * k5));
    const VecX<S> y_new =
        y + h * (T::b1 * k1 + T::b3 * k3 + T::b4 * k4 + T::b5 * k5 + T::b6 * k6);
    const VecX<S> k7 = f(t + h, y_new);

    const VecX<S> err = h * (T::e1 * k1 + T::e3 * k3 + T::e4 * k4 + T::e5 * k5 +
                             T::e6 * k6 + T::e7 * k7);
    const S err_norm = detail::error_norm(err, y, y_new, opt.rel_tol, opt.abs_tol);

    if (err_norm <= S(1)) {
      if (want_dense) {
        OdeSegment<S> seg;
        seg.t0 = t;
        seg.h = h;
        seg.y0 = y;
        const VecX<S>* ks[7] = {&k1, &k2, &k3, &k4, &k5, &k6, &k7};
        for (int m = 0; m < 4; ++m) {
          VecX<S> dm = VecX<S>::Zero(y.size());
          for (int i = 0; i < 7; ++i)
            if (T::p[i][m] != S(0)) dm += T::p[i][m] * (*ks[i]);
          seg.d[m] = h * dm;
        }
        sol.segments.push_back(std::move(seg));
      }
      // Land on t1 exactly; t + h can fall an ulp short and strand the loop.
      t = final_step ? t1 : t + h;
      y = y_new;
      k1 = k7;  // first-same-as-last
      sol.ts.push_back(t);
      sol.ys.push_back(y);
      sol.fs.push_back(k1);
      S fac = err_norm == S(0) ? S(10) : S(0.9) * std::pow(err_norm, S(-0.2));
      fac = std::clamp(fac, S(0.2), S(10));
      h *= fac;
    } else {
      S fac = S(0.9) * std::pow(err_norm, S(-0.2));
      fac = std::clamp(fac, S(0.2), S(1));
      h *= fac;
    }
    if (std::abs(h) > opt.max_step) h = dir * opt.max_step;
  }

  if (dir < S(0)) {
    // Present ascending in time.
    std::reverse(sol.ts.begin(), sol.ts.end());
    std::reverse(sol.ys.begin(), sol.ys.end());
    std::reverse(sol.fs.begin(), sol.fs.end());
    std::reverse(sol.segments.begin(), sol.segments.end());
  }
  return sol;
}

}  // namespace manekit
