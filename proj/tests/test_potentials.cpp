#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include <manekit/control.hpp>
#include <manekit/flow.hpp>
#include <manekit/models.hpp>
#include <manekit/normalform.hpp>
#include <manekit/orbits.hpp>
#include <manekit/potentials.hpp>

using namespace manekit;

namespace {

ControlCurve<double> sample_curve_1d(double delta) {
  auto b = ControlCurve<double>::make(1, delta);
  b.coeffs << 0.3, -0.2, 0.5, 0.1, -0.4, 0.25, 0.0, 0.15;
  return b;
}

Vec phase_point(std::initializer_list<double> xs) {
  Vec x(static_cast<int>(xs.size()));
  int i = 0;
  for (double v : xs) x[i++] = v;
  return x;
}

}  // namespace

TEST_CASE("zero curve builds the zero potential") {
  const auto u = admissible_from_B(ControlCurve<double>::make(1, 0.6), 0.3);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> box(-0.8, 0.8);
  for (int k = 0; k < 20; ++k) {
    Vec q(2);
    q << box(rng), box(rng);
    CHECK(u.value(q) == 0.0);
    CHECK(u.grad(q).cwiseAbs().maxCoeff() == 0.0);
    CHECK(u.hess(q).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("axis fiber second derivative reproduces the curve") {
  const auto b = sample_curve_1d(0.6);
  const auto u = admissible_from_B(b, 0.3);
  for (int i = 0; i <= 50; ++i) {
    const double t = 0.6 * i / 50.0;
    Vec q(2);
    q << t, 0.0;
    const double want = b.value(t)(0, 0);
    CHECK(u.hess(q)(1, 1) == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("value and differential vanish along the axis") {
  const auto u = admissible_from_B(sample_curve_1d(0.6), 0.3);
  for (int i = 0; i < 200; ++i) {
    const double t = -0.1 + 0.8 * i / 199.0;
    Vec q(2);
    q << t, 0.0;
    CHECK(u.value(q) == 0.0);
    CHECK(u.grad(q).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("support stays inside the declared tube") {
  const double r = 0.3;
  const auto u = admissible_from_B(sample_curve_1d(0.6), r);
  // Radial boundary and beyond.
  for (double t : {0.1, 0.3, 0.5})
    for (double s : {1.0, 1.2, 2.0}) {
      Vec q(2);
      q << t, r * s;
      CHECK(u.value(q) == 0.0);
      CHECK(u.grad(q).cwiseAbs().maxCoeff() == 0.0);
      CHECK(u.hess(q).cwiseAbs().maxCoeff() == 0.0);
    }
  // Axial interval (0, delta) bounds every bump support.
  for (double t : {-0.05, 0.0, 0.6, 0.7}) {
    Vec q(2);
    q << t, 0.12;
    CHECK(u.value(q) == 0.0);
  }
  CHECK(u.support_lo > 0.0);
  CHECK(u.support_hi < 0.6);
}

TEST_CASE("fiber hessian block matches the curve on the half-radius tube") {
  // Where the cutoff plateau is still identically one the quadratic model is
  // exact, not just close.
  const auto b = sample_curve_1d(0.6);
  const double r = 0.3;
  const auto u = admissible_from_B(b, r);
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> ts(0.05, 0.55);
  std::uniform_real_distribution<double> qs(-0.49 * r, 0.49 * r);
  for (int k = 0; k < 40; ++k) {
    Vec q(2);
    q << ts(rng), qs(rng);
    const double bb = b.value(q[0])(0, 0);
    CHECK(u.value(q) == doctest::Approx(0.5 * bb * q[1] * q[1]).epsilon(1e-13));
    CHECK(u.hess(q)(1, 1) == doctest::Approx(bb).epsilon(1e-12));
  }
}

TEST_CASE("admissible potential jets agree with finite differences") {
  const auto u = admissible_from_B(sample_curve_1d(0.6), 0.3);
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> ts(0.05, 0.55);
  std::uniform_real_distribution<double> qs(-0.28, 0.28);
  const double h = 1e-6;
  for (int k = 0; k < 25; ++k) {
    Vec q(2);
    q << ts(rng), qs(rng);
    const Vec g = u.grad(q);
    const Mat hh = u.hess(q);
    for (int j = 0; j < 2; ++j) {
      Vec qp = q, qm = q;
      qp[j] += h;
      qm[j] -= h;
      CHECK(g[j] == doctest::Approx((u.value(qp) - u.value(qm)) / (2 * h)).epsilon(1e-6));
      const Vec gc = (u.grad(qp) - u.grad(qm)) / (2 * h);
      for (int i = 0; i < 2; ++i)
        CHECK(hh(i, j) == doctest::Approx(gc[i]).epsilon(2e-5).scale(1.0));
    }
  }
}

TEST_CASE("potentials are linear in the curve where cutoffs coincide") {
  auto b1 = ControlCurve<double>::make(2, 0.5);
  auto b2 = ControlCurve<double>::make(2, 0.5);
  std::mt19937_64 rng(47);
  std::normal_distribution<double> dist(0.0, 0.6);
  for (int i = 0; i < b1.coeffs.rows(); ++i)
    for (int j = 0; j < b1.coeffs.cols(); ++j) {
      b1.coeffs(i, j) = dist(rng);
      b2.coeffs(i, j) = dist(rng);
    }
  auto bsum = b1;
  bsum.coeffs += b2.coeffs;

  const double r = 0.2;
  const auto u1 = admissible_from_B(b1, r);
  const auto u2 = admissible_from_B(b2, r);
  const auto us = admissible_from_B(bsum, r);
  std::uniform_real_distribution<double> ts(-0.1, 0.6);
  std::uniform_real_distribution<double> qs(-0.25, 0.25);
  for (int k = 0; k < 30; ++k) {
    Vec q(3);
    q << ts(rng), qs(rng), qs(rng);
    CHECK(us.value(q) ==
          doctest::Approx(u1.value(q) + u2.value(q)).epsilon(1e-13).scale(1e-3));
    CHECK((us.grad(q) - u1.grad(q) - u2.grad(q)).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK((us.hess(q) - u1.hess(q) - u2.hess(q)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("transverse dirac jet carries the exact axis differential") {
  const double sigma = 0.3, w = 0.02, r = 0.15;
  const auto u = dirac_jet_potential(3, 3, sigma, w, r);
  const DiracBump<double> spike{sigma - w / 2, w};
  for (int i = 0; i <= 40; ++i) {
    const double t = sigma - w + 2.0 * w * i / 40.0;
    Vec q(3);
    q << t, 0.0, 0.0;
    CHECK(u.value(q) == 0.0);
    const Vec g = u.grad(q);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
    CHECK(g[2] == doctest::Approx(spike.value(t)).epsilon(1e-14).scale(1.0));
  }
  // Off the axis but inside the plateau the linear factor is untouched.
  Vec q(3);
  q << sigma, 0.02, -0.03;
  CHECK(u.value(q) == doctest::Approx(-0.03 * spike.value(sigma)).epsilon(1e-13));
}

TEST_CASE("axial dirac jet reproduces the spike ahead of its fade") {
  const double sigma = 0.3, w = 0.005, r = 0.15;
  const auto u = dirac_jet_potential(2, 1, sigma, w, r);
  const DiracBump<double> spike{sigma - w / 2, w};
  for (int i = 0; i <= 60; ++i) {
    const double t = sigma - w + 3.0 * w * i / 60.0;
    Vec q(2);
    q << t, 0.0;
    CHECK(u.grad(q)[0] == doctest::Approx(spike.value(t)).epsilon(1e-8).scale(1.0));
    CHECK(u.grad(q)[1] == 0.0);
  }
  // Unit mass across the spike (Simpson).
  const int m = 600;
  double acc = 0.0;
  const double a = sigma - w / 2, hstep = w / m;
  for (int i = 0; i < m; ++i) {
    const double t0 = a + i * hstep;
    auto du1 = [&](double t) {
      Vec q(2);
      q << t, 0.0;
      return u.grad(q)[0];
    };
    acc += hstep / 6.0 * (du1(t0) + 4.0 * du1(t0 + hstep / 2) + du1(t0 + hstep));
  }
  CHECK(acc == doctest::Approx(1.0).epsilon(1e-8));
  // The fade returns the field to zero further down the axis.
  Vec far(2);
  far << sigma + 20 * w, 0.0;
  CHECK(u.value(far) == 0.0);
  CHECK(u.grad(far).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dirac jets vanish outside the radial tube") {
  const double sigma = 0.3, w = 0.02, r = 0.1;
  const auto u1 = dirac_jet_potential(2, 1, sigma, w, r);
  const auto u2 = dirac_jet_potential(2, 2, sigma, w, r);
  for (double s : {1.0, 1.3, 3.0}) {
    Vec q(2);
    q << sigma, r * s;
    CHECK(u1.value(q) == 0.0);
    CHECK(u2.value(q) == 0.0);
    CHECK(u1.grad(q).cwiseAbs().maxCoeff() == 0.0);
    CHECK(u2.grad(q).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("dirac jet finite difference cross-check") {
  const double sigma = 0.25, w = 0.03, r = 0.2;
  std::mt19937_64 rng(59);
  std::uniform_real_distribution<double> ts(sigma - 2 * w, sigma + 2 * w);
  std::uniform_real_distribution<double> qs(-0.15, 0.15);
  for (int j : {1, 2, 3}) {
    const auto u = dirac_jet_potential(3, j, sigma, w, r);
    for (int k = 0; k < 10; ++k) {
      Vec q(3);
      q << ts(rng), qs(rng), qs(rng);
      const Vec g = u.grad(q);
      const Mat hh = u.hess(q);
      const double h = 1e-7;
      for (int c = 0; c < 3; ++c) {
        Vec qp = q, qm = q;
        qp[c] += h;
        qm[c] -= h;
        CHECK(g[c] ==
              doctest::Approx((u.value(qp) - u.value(qm)) / (2 * h)).epsilon(5e-5).scale(1.0));
        const Vec gc = (u.grad(qp) - u.grad(qm)) / (2 * h);
        for (int i = 0; i < 3; ++i)
          CHECK(hh(i, c) == doctest::Approx(gc[i]).epsilon(5e-4).scale(10.0));
      }
    }
  }
}

TEST_CASE("transport through the trivial chart returns the same field") {
  const auto u = admissible_from_B(sample_curve_1d(0.6), 0.2);
  FiberedChart<double> chart(2, 0.7);
  const auto field = transport_potential(u, chart);
  std::mt19937_64 rng(67);
  std::uniform_real_distribution<double> box(-0.3, 0.7);
  for (int k = 0; k < 20; ++k) {
    Vec q(2);
    q << box(rng), 0.4 * (box(rng) - 0.2);
    CHECK(field.value(q) == doctest::Approx(u.value(q)).epsilon(1e-14).scale(1e-6));
    CHECK((field.gradient(q) - u.grad(q)).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK((field.hessian(q) - u.hess(q)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("transport through a rotation carries jets covariantly") {
  const double ang = 0.7;
  Mat rot(2, 2);
  rot << std::cos(ang), -std::sin(ang), std::sin(ang), std::cos(ang);

  HomogeneousPiece<double> piece;
  piece.phi = [rot](const VecX<double>& q) { return (rot * q).eval(); };
  piece.dphi = [rot](const VecX<double>&) { return rot; };
  piece.dphi_dir = [](const VecX<double>& q, const VecX<double>&) {
    return Mat(Mat::Zero(q.size(), q.size()));
  };
  piece.phi_inv = [rot](const VecX<double>& q) { return (rot.transpose() * q).eval(); };
  FiberedChart<double> chart(2, 0.7);
  chart.push(piece);

  const auto u = admissible_from_B(sample_curve_1d(0.6), 0.2);
  const auto field = transport_potential(u, chart);

  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> ts(0.0, 0.6);
  std::uniform_real_distribution<double> qs(-0.2, 0.2);
  for (int k = 0; k < 20; ++k) {
    Vec q(2);
    q << ts(rng), qs(rng);
    const Vec qa = rot * q;
    CHECK(field.value(qa) == doctest::Approx(u.value(q)).epsilon(1e-12).scale(1e-6));
    CHECK((field.gradient(qa) - rot * u.grad(q)).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((field.hessian(qa) - rot * u.hess(q) * rot.transpose()).cwiseAbs().maxCoeff() <=
          2e-6);
  }
  // Admissibility along the rotated axis.
  for (int i = 0; i <= 30; ++i) {
    Vec axis(2);
    axis << 0.6 * i / 30.0, 0.0;
    const Vec qa = rot * axis;
    CHECK(std::abs(field.value(qa)) <= 1e-15);
    CHECK(field.gradient(qa).cwiseAbs().maxCoeff() <= 1e-13);
  }
}

TEST_CASE("transport through a curved chart keeps the original orbit clean") {
  const auto h = make_convex_well();
  const Vec x0 = phase_point({0.15, -0.1, 0.9, 0.25});
  const auto nf = build_normal_form(h, x0, 0.3);

  auto b = ControlCurve<double>::make(1, 0.3);
  b.coeffs << 0.4, -0.3, 0.2, 0.5, -0.2, 0.3, 0.1, -0.4;
  const auto u = admissible_from_B(b, 0.08);
  const auto field = transport_potential(u, nf.chart);

  FlowConfig<double> cfg;
  const auto fwd = integrate_flow(h, x0, {0.0, 0.36}, cfg);
  const auto bwd = integrate_flow(h, x0, {0.0, -0.06}, cfg);
  for (int i = 0; i <= 40; ++i) {
    const double t = -0.05 + 0.4 * i / 40.0;
    const Vec xt = t >= 0.0 ? fwd.state(t) : bwd.state(t);
    const Vec qt = xt.head(2);
    CHECK(std::abs(field.value(qt)) <= 1e-7);
    CHECK(field.gradient(qt).cwiseAbs().maxCoeff() <= 1e-7);
  }
  // Off-axis the transported field is genuinely nonzero.
  const Vec q_nf = phase_point({0.15, 0.03, 0.0, 0.0});
  const Vec q_orig = nf.chart.apply(q_nf).head(2);
  CHECK(std::abs(field.value(q_orig)) > 1e-8);
}

TEST_CASE("transport rejects supports wider than the chart tube") {
  const auto h = make_convex_well();
  const Vec x0 = phase_point({0.15, -0.1, 0.9, 0.25});
  const auto nf = build_normal_form(h, x0, 0.3);

  const auto wide = admissible_from_B(sample_curve_1d(0.6), 0.05);
  CHECK_THROWS_AS(transport_potential(wide, nf.chart), HypothesisViolation);

  auto b = ControlCurve<double>::make(1, 0.3);
  b.coeffs(3, 0) = 0.2;
  const auto fat = admissible_from_B(b, 0.5);
  CHECK_THROWS_AS(transport_potential(fat, nf.chart), HypothesisViolation);
}

TEST_CASE("adding a transported admissible potential preserves the orbit") {
  const auto h = make_convex_well();
  Vec seed(4);
  seed << 0.1, 0.05, 1.02, 0.28;
  const auto orbit = find_periodic_orbit(h, seed, 6.2);

  const Vec x0 = orbit.samples.state(0.0);
  const auto nf = build_normal_form(h, x0, 0.25);
  auto b = ControlCurve<double>::make(1, 0.25);
  b.coeffs << 0.5, -0.4, 0.3, 0.6, -0.3, 0.2, 0.4, -0.5;
  const auto u = admissible_from_B(b, 0.06);
  const auto hu = add_potential(h, transport_potential(u, nf.chart));

  const auto orbit_u = find_periodic_orbit(hu, Vec(x0), orbit.period);
  CHECK(orbit_u.period == doctest::Approx(orbit.period).epsilon(1e-8));
  CHECK((orbit_u.samples.state(0.0) - x0).cwiseAbs().maxCoeff() <= 1e-7);
  for (double t : {1.0, 2.5, 4.0, 5.5})
    CHECK((orbit_u.samples.state(t) - orbit.samples.state(t)).cwiseAbs().maxCoeff() <=
          1e-6);
}

TEST_CASE("disjoint support check separates tubes from far arcs") {
  const auto h = make_convex_well();
  Vec seed(4);
  seed << 0.1, 0.05, 1.02, 0.28;
  const auto orbit = find_periodic_orbit(h, seed, 6.2);
  const Vec x0 = orbit.samples.state(0.0);
  const auto nf = build_normal_form(h, x0, 0.25);

  auto b = ControlCurve<double>::make(1, 0.25);
  b.coeffs(2, 0) = 0.3;
  const auto thin = admissible_from_B(b, 0.05);
  CHECK(disjoint_support_check(thin, orbit, 0.0, 0.25, nf.chart));

  const auto fat = admissible_from_B(b, 2.5);
  CHECK_FALSE(disjoint_support_check(fat, orbit, 0.0, 0.25, nf.chart));
}

TEST_CASE("libration orbits defeat the disjointness requirement at every radius") {
  const auto h = make_natural_well();
  Vec x0(4);
  x0 << 0.0, 0.0, 1.0, 0.0;
  const auto orbit = find_periodic_orbit(h, x0, 6.3);
  const Vec anchor = orbit.samples.state(0.0);
  const auto nf = build_normal_form(h, anchor, 0.2);

  auto b = ControlCurve<double>::make(1, 0.2);
  b.coeffs(3, 0) = 0.25;
  for (double r : {0.01, 0.05, 0.15}) {
    const auto u = admissible_from_B(b, r);
    CHECK_FALSE(disjoint_support_check(u, orbit, 0.0, 0.2, nf.chart));
  }
}

TEST_CASE("default tube radius follows the window and chart scales") {
  const auto h = make_convex_well();
  Vec seed(4);
  seed << 0.1, 0.05, 1.02, 0.28;
  const auto orbit = find_periodic_orbit(h, seed, 6.2);

  // The far side of the loop is about two units away, so the chart radius
  // governs.
  const double r = default_tube_radius(orbit, 0.0, 0.25, 0.25);
  CHECK(r == doctest::Approx(0.0625).epsilon(1e-12));

  const auto hn = make_natural_well();
  Vec x0(4);
  x0 << 0.0, 0.0, 1.0, 0.0;
  const auto lib = find_periodic_orbit(hn, x0, 6.3);
  // A libration revisits its own arc, so the self-distance collapses.
  CHECK(default_tube_radius(lib, 0.0, 0.2, 0.25) <= 1e-3);
}
