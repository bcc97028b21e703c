#pragma once

// Chebyshev interpolants on an interval [a, b].  Values live at
// Chebyshev-Lobatto nodes; differentiation and integration act on the
// coefficient sequence, so every derived curve shares one coherent jet with
// its parent.  That coherence is what makes the chart-composition identities
// close to rounding instead of to interpolation error.

#include <cmath>
#include <functional>
#include <vector>

#include <manekit/types.hpp>

namespace manekit {

template <typename S>
class ChebCurve {
 public:
  ChebCurve() = default;

  // Nodes in increasing order: x_j = a + (b-a)(1 - cos(pi j / n))/2.
  static std::vector<S> nodes(int n, S a, S b) {
    check_interval(a, b);
    if (n < 1) throw DimensionError("ChebCurve::nodes: need n >= 1");
    std::vector<S> out(n + 1);
    for (int j = 0; j <= n; ++j) {
      const S theta = pi<S> * S(j) / S(n);
      out[j] = a + (b - a) * (S(1) - std::cos(theta)) / S(2);
    }
    out[0] = a;
    out[n] = b;
    return out;
  }

  // Interpolant through values listed at nodes(n, a, b) in increasing order.
  static ChebCurve from_values(const std::vector<S>& values, S a, S b) {
    check_interval(a, b);
    const int n = static_cast<int>(values.size()) - 1;
    if (n < 1) throw DimensionError("ChebCurve::from_values: need at least 2 values");
    // DCT-I on the reversed sequence (classic node order x_j = cos(pi j/n)).
    std::vector<S> y(values.rbegin(), values.rend());
    ChebCurve c;
    c.a_ = a;
    c.b_ = b;
    c.coef_.assign(n + 1, S(0));
    for (int k = 0; k <= n; ++k) {
      S acc = (y[0] + (k % 2 == 0 ? y[n] : -y[n])) / S(2);
      for (int j = 1; j < n; ++j)
        acc += y[j] * std::cos(pi<S> * S(k) * S(j) / S(n));
      acc *= S(2) / S(n);
      if (k == 0 || k == n) acc /= S(2);
      c.coef_[k] = acc;
    }
    return c;
  }

  // Adaptive fit: doubles the node count until the coefficient tail is below
  // tol relative to the largest coefficient, then truncates that tail.
  template <typename F>
  static ChebCurve fit(F&& f, S a, S b, S tol = S(1e-13), int max_degree = 512) {
    check_interval(a, b);
    for (int n = 16; n <= max_degree; n *= 2) {
      const auto xs = nodes(n, a, b);
      std::vector<S> vals(xs.size());
      for (size_t j = 0; j < xs.size(); ++j) vals[j] = f(xs[j]);
      ChebCurve c = from_values(vals, a, b);
      S mx = S(0);
      for (S v : c.coef_) mx = std::max(mx, std::abs(v));
      const S cutoff = tol * std::max(mx, S(1e-300));
      const S tail = std::max(std::abs(c.coef_[n]), std::abs(c.coef_[n - 1]));
      if (tail <= cutoff || n == max_degree) {
        c.truncate(cutoff);
        return c;
      }
    }
    throw NumericalFailure("ChebCurve::fit: did not converge");
  }

  S operator()(S t) const {
    // Clenshaw recurrence on the mapped coordinate.
    const S x = (S(2) * t - (a_ + b_)) / (b_ - a_);
    S bk1 = S(0), bk2 = S(0);
    for (int k = static_cast<int>(coef_.size()) - 1; k >= 1; --k) {
      const S bk = S(2) * x * bk1 - bk2 + coef_[k];
      bk2 = bk1;
      bk1 = bk;
    }
    return x * bk1 - bk2 + coef_[0];
  }

  ChebCurve derivative() const {
    const int n = degree();
    ChebCurve d;
    d.a_ = a_;
    d.b_ = b_;
    d.coef_.assign(std::max(n, 1), S(0));
    if (n == 0) {
      d.coef_.assign(1, S(0));
      return d;
    }
    std::vector<S> dc(n + 2, S(0));
    for (int k = n; k >= 1; --k) dc[k - 1] = dc[k + 1] + S(2 * k) * coef_[k];
    dc[0] /= S(2);
    const S scale = S(2) / (b_ - a_);
    d.coef_.assign(n, S(0));
    for (int k = 0; k < n; ++k) d.coef_[k] = dc[k] * scale;
    return d;
  }

  // Antiderivative vanishing at the left endpoint.
  ChebCurve antiderivative() const { return antiderivative_impl(degree()); }

  S left() const { return a_; }
  S right() const { return b_; }
  int degree() const { return static_cast<int>(coef_.size()) - 1; }
  const std::vector<S>& coefficients() const { return coef_; }

  void truncate(S cutoff) {
    int n = degree();
    while (n > 0 && std::abs(coef_[n]) <= cutoff) --n;
    coef_.resize(n + 1);
  }

 private:
  static void check_interval(S a, S b) {
    if (!(b > a)) throw DimensionError("ChebCurve: need b > a");
  }

  ChebCurve antiderivative_impl(int n) const {
    ChebCurve out;
    out.a_ = a_;
    out.b_ = b_;
    out.coef_.assign(n + 2, S(0));
    if (n >= 0) out.coef_[1] += coef_[0];
    if (n >= 1) out.coef_[2] += coef_[1] / S(4);
    for (int k = 2; k <= n; ++k) {
      out.coef_[k + 1] += coef_[k] / S(2 * (k + 1));
      out.coef_[k - 1] -= coef_[k] / S(2 * (k - 1));
    }
    const S scale = (b_ - a_) / S(2);
    for (S& c : out.coef_) c *= scale;
    out.coef_[0] -= out(a_);
    return out;
  }

  S a_ = S(0), b_ = S(1);
  std::vector<S> coef_ = {S(0)};
};

// Matrix-valued curve, one scalar interpolant per entry.
template <typename S>
class ChebCurveMat {
 public:
  ChebCurveMat() = default;

  static ChebCurveMat from_values(const std::vector<MatX<S>>& values, S a, S b) {
    if (values.size() < 2) throw DimensionError("ChebCurveMat: need at least 2 samples");
    ChebCurveMat c;
    c.rows_ = static_cast<int>(values[0].rows());
    c.cols_ = static_cast<int>(values[0].cols());
    c.comp_.reserve(c.rows_ * c.cols_);
    std::vector<S> scalar(values.size());
    for (int i = 0; i < c.rows_; ++i)
      for (int j = 0; j < c.cols_; ++j) {
        for (size_t m = 0; m < values.size(); ++m) scalar[m] = values[m](i, j);
        c.comp_.push_back(ChebCurve<S>::from_values(scalar, a, b));
      }
    return c;
  }

  template <typename F>
  static ChebCurveMat fit(F&& f, S a, S b, S tol = S(1e-13), int max_degree = 512) {
    // Sample the whole matrix once per node at the largest level all entries
    // need, by fitting a probe entry first.  Simpler: adapt on the max norm.
    for (int n = 16; n <= max_degree; n *= 2) {
      const auto xs = ChebCurve<S>::nodes(n, a, b);
      std::vector<MatX<S>> vals(xs.size());
      for (size_t j = 0; j < xs.size(); ++j) vals[j] = f(xs[j]);
      ChebCurveMat c = from_values(vals, a, b);
      S mx = S(0), tail = S(0);
      for (const auto& e : c.comp_) {
        for (S v : e.coefficients()) mx = std::max(mx, std::abs(v));
        const auto& cf = e.coefficients();
        if (cf.size() >= 2)
          tail = std::max(tail, std::max(std::abs(cf[cf.size() - 1]),
                                         std::abs(cf[cf.size() - 2])));
      }
      const S cutoff = tol * std::max(mx, S(1e-300));
      if (tail <= cutoff || n == max_degree) {
        for (auto& e : c.comp_) e.truncate(cutoff);
        return c;
      }
    }
    throw NumericalFailure("ChebCurveMat::fit: did not converge");
  }

  MatX<S> operator()(S t) const {
    MatX<S> m(rows_, cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) m(i, j) = comp_[i * cols_ + j](t);
    return m;
  }

  ChebCurveMat derivative() const {
    ChebCurveMat d = *this;
    for (auto& e : d.comp_) e = e.derivative();
    return d;
  }

  ChebCurveMat antiderivative() const {
    ChebCurveMat d = *this;
    for (auto& e : d.comp_) e = e.antiderivative();
    return d;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  S left() const { return comp_.empty() ? S(0) : comp_[0].left(); }
  S right() const { return comp_.empty() ? S(1) : comp_[0].right(); }

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<ChebCurve<S>> comp_;
};

// Vector-valued curve.
template <typename S>
class ChebCurveVec {
 public:
  ChebCurveVec() = default;

  static ChebCurveVec from_values(const std::vector<VecX<S>>& values, S a, S b) {
    std::vector<MatX<S>> mats(values.size());
    for (size_t i = 0; i < values.size(); ++i) mats[i] = values[i];
    ChebCurveVec c;
    c.m_ = ChebCurveMat<S>::from_values(mats, a, b);
    return c;
  }

  template <typename F>
  static ChebCurveVec fit(F&& f, S a, S b, S tol = S(1e-13), int max_degree = 512) {
    ChebCurveVec c;
    c.m_ = ChebCurveMat<S>::fit([&](S t) { return MatX<S>(f(t)); }, a, b, tol,
                                max_degree);
    return c;
  }

  VecX<S> operator()(S t) const { return m_(t); }
  ChebCurveVec derivative() const {
    ChebCurveVec d;
    d.m_ = m_.derivative();
    return d;
  }
  ChebCurveVec antiderivative() const {
    ChebCurveVec d;
    d.m_ = m_.antiderivative();
    return d;
  }
  int size() const { return m_.rows(); }
  S left() const { return m_.left(); }
  S right() const { return m_.right(); }

 private:
  ChebCurveMat<S> m_;
};

}  // namespace manekit
