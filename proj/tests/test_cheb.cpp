// Chebyshev interpolants: the shared representation for scalar, vector, and
// matrix curves of the normal-form pipeline.  Oracles are closed-form calculus
// on exp, sin, and low-degree polynomials.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <manekit/cheb.hpp>

#include <cmath>

using namespace manekit;

TEST_CASE("polynomial reproduction is exact") {
  const auto f = [](double t) { return t * t * t - 0.5 * t + 2.0; };
  const auto c = ChebCurve<double>::fit(f, 0.0, 1.0);
  CHECK(c.degree() <= 16);
  for (int i = 0; i <= 50; ++i) {
    const double t = i / 50.0;
    CHECK(std::abs(c(t) - f(t)) <= 1e-13);
  }
  const auto dc = c.derivative();
  for (int i = 0; i <= 50; ++i) {
    const double t = i / 50.0;
    CHECK(std::abs(dc(t) - (3.0 * t * t - 0.5)) <= 1e-12);
  }
}

TEST_CASE("transcendental fit, derivative, antiderivative") {
  const auto c = ChebCurve<double>::fit([](double t) { return std::exp(t); }, -1.0, 2.0);
  const auto dc = c.derivative();
  const auto d2c = dc.derivative();
  const auto ic = c.antiderivative();
  for (int i = 0; i <= 100; ++i) {
    const double t = -1.0 + 3.0 * i / 100.0;
    const double e = std::exp(t);
    CHECK(std::abs(c(t) - e) <= 1e-12 * e);
    CHECK(std::abs(dc(t) - e) <= 1e-10 * e);
    CHECK(std::abs(d2c(t) - e) <= 1e-8 * e);
    CHECK(std::abs(ic(t) - (e - std::exp(-1.0))) <= 1e-12 * (1.0 + e));
  }
  CHECK(std::abs(ic(-1.0)) <= 1e-13);
}

TEST_CASE("node samples round-trip") {
  const int n = 64;
  const auto nodes = ChebCurve<double>::nodes(n, 0.0, 2.0 * pi<double>);
  REQUIRE(static_cast<int>(nodes.size()) == n + 1);
  CHECK(nodes.front() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(nodes.back() == doctest::Approx(2.0 * pi<double>).epsilon(1e-15));
  for (size_t j = 1; j < nodes.size(); ++j) CHECK(nodes[j] > nodes[j - 1]);

  std::vector<double> vals(nodes.size());
  for (size_t j = 0; j < nodes.size(); ++j) vals[j] = std::sin(nodes[j]);
  const auto c = ChebCurve<double>::from_values(vals, 0.0, 2.0 * pi<double>);
  const auto dc = c.derivative();
  for (int i = 0; i <= 97; ++i) {
    const double t = 2.0 * pi<double> * i / 97.0;
    CHECK(std::abs(c(t) - std::sin(t)) <= 1e-12);
    CHECK(std::abs(dc(t) - std::cos(t)) <= 1e-10);
  }
}

TEST_CASE("tail truncation keeps degree modest") {
  const auto c = ChebCurve<double>::fit([](double t) { return std::sin(t); }, 0.0, 1.0);
  CHECK(c.degree() <= 24);
}

TEST_CASE("matrix curve componentwise calculus") {
  const auto f = [](double t) {
    Mat m(2, 2);
    m << 1.0 + t, t * t, t * t, 2.0;
    return m;
  };
  const auto a = ChebCurveMat<double>::fit(f, -0.5, 0.5);
  const auto da = a.derivative();
  for (int i = 0; i <= 20; ++i) {
    const double t = -0.5 + i / 20.0;
    Mat expect_d(2, 2);
    expect_d << 1.0, 2.0 * t, 2.0 * t, 0.0;
    CHECK((a(t) - f(t)).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK((da(t) - expect_d).cwiseAbs().maxCoeff() <= 1e-12);
  }
  CHECK(a.rows() == 2);
  CHECK(a.cols() == 2);
}

TEST_CASE("vector curve from sequential samples") {
  const int n = 32;
  const auto nodes = ChebCurve<double>::nodes(n, 0.0, 1.0);
  std::vector<Vec> vals;
  for (double t : nodes) {
    Vec v(2);
    v << std::cos(t), t * t;
    vals.push_back(v);
  }
  const auto c = ChebCurveVec<double>::from_values(vals, 0.0, 1.0);
  for (int i = 0; i <= 30; ++i) {
    const double t = i / 30.0;
    CHECK(std::abs(c(t)[0] - std::cos(t)) <= 1e-13);
    CHECK(std::abs(c(t)[1] - t * t) <= 1e-13);
  }
  const auto ic = c.antiderivative();
  CHECK(std::abs(ic(1.0)[0] - std::sin(1.0)) <= 1e-12);
  CHECK(std::abs(ic(1.0)[1] - 1.0 / 3.0) <= 1e-12);
}

TEST_CASE("degenerate and invalid inputs") {
  CHECK_THROWS_AS(ChebCurve<double>::fit([](double t) { return t; }, 1.0, 1.0),
                  DimensionError);
  std::vector<double> two_vals = {1.0, 2.0};
  // Two Lobatto nodes = degree 1: linear through the endpoints.
  const auto lin = ChebCurve<double>::from_values(two_vals, 0.0, 1.0);
  CHECK(std::abs(lin(0.25) - 1.25) <= 1e-14);
}
