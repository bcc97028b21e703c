// Flow integration, variational transitions, section crossings.  Oracles are
// closed-form solutions of the zoo models (linear drift, harmonic rotation)
// and self-consistency of conserved energy.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <manekit/flow.hpp>
#include <manekit/models.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

using namespace manekit;

namespace {

Hamiltonian<double> make_pendulum() {
  TrigScalarField<double> v;
  Vec freq(1);
  freq << 1.0;
  v.terms.push_back({1.0, freq, pi<double> / 2});  // cos(q)
  return make_natural(Mat(Mat::Identity(1, 1)), v, Domain<double>::cylinder(1));
}

}  // namespace

TEST_CASE("flow config validation") {
  FlowConfig<double> cfg;
  CHECK_NOTHROW(cfg.validate());
  FlowConfig<double> bad = cfg;
  bad.rel_tol = 0.1;
  CHECK_THROWS_AS(bad.validate(), DimensionError);
  bad = cfg;
  bad.abs_tol = -1.0;
  CHECK_THROWS_AS(bad.validate(), DimensionError);
  bad = cfg;
  bad.max_step = 0.0;
  CHECK_THROWS_AS(bad.validate(), DimensionError);
}

TEST_CASE("linear drift flow is exact") {
  const auto H = make_momentum_model(1);
  Vec x0 = Vec::Zero(4);
  const auto traj = integrate_flow(H, x0, {0.0, 1.0}, FlowConfig<double>{});
  for (double t : {0.0, 0.25, 0.619, 1.0}) {
    const Vec x = traj.state(t);
    Vec expected = Vec::Zero(4);
    expected[0] = t;
    expected[2] = 0.0;
    CHECK((x - expected).cwiseAbs().maxCoeff() <= 1e-12);
  }
  CHECK(traj.energy_drift() <= 1e-12);
}

TEST_CASE("harmonic model: closed form, periodic return, drift") {
  const auto H = make_convex_well();
  Vec x0(4);
  x0 << 0.0, 0.0, 1.0, 0.3;
  const double two_pi = 2.0 * pi<double>;
  const auto traj = integrate_flow(H, x0, {0.0, two_pi}, FlowConfig<double>{});
  for (int i = 0; i <= 50; ++i) {
    const double t = two_pi * i / 50.0;
    Vec expected(4);
    expected << t, 0.3 * std::sin(t), 1.0, 0.3 * std::cos(t);
    CHECK((traj.state(t) - expected).cwiseAbs().maxCoeff() <= 1e-8);
  }
  // Return to the start on the periodic coordinate.
  const Vec delta = H.domain().phase_delta(traj.state(two_pi), x0);
  CHECK(delta.cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(traj.energy_drift() <= 1e-9);
}

TEST_CASE("pendulum energy drift and time reversal") {
  const auto H = make_pendulum();
  Vec x0(2);
  x0 << 0.0, 0.9;
  FlowConfig<double> cfg;
  cfg.rel_tol = 1e-10;
  cfg.abs_tol = 1e-12;
  const auto traj = integrate_flow(H, x0, {0.0, 100.0}, cfg);
  CHECK(traj.energy_drift() <= 1e-7);

  const auto fwd = integrate_flow(H, x0, {0.0, 10.0}, cfg);
  const auto bwd = integrate_flow(H, fwd.state(10.0), {10.0, 0.0}, cfg);
  CHECK((bwd.state(0.0) - x0).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("variational flow of the drift model is the identity") {
  const auto H = make_momentum_model(1);
  Vec x0 = Vec::Zero(4);
  const auto var = integrate_variational(H, x0, {0.0, 2.0}, FlowConfig<double>{});
  for (double t : {0.0, 0.3, 1.0, 2.0}) {
    CHECK((var.transition(0.0, t) - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("variational flow of the harmonic model") {
  const auto H = make_convex_well();
  Vec x0(4);
  x0 << 0.0, 0.0, 1.0, 0.3;
  const auto var = integrate_variational(H, x0, {0.0, 7.0}, FlowConfig<double>{});

  for (double t : {0.5, 2.0, 6.28}) {
    const Mat phi = var.transition(0.0, t);
    // Oscillator sub-block in coordinates (q2, p2).
    Mat rot(2, 2);
    rot << std::cos(t), std::sin(t), -std::sin(t), std::cos(t);
    Mat sub(2, 2);
    sub << phi(1, 1), phi(1, 3), phi(3, 1), phi(3, 3);
    CHECK((sub - rot).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(symplectic_residual(phi) <= 1e-7 * t);
    CHECK(std::abs(phi.determinant() - 1.0) <= 1e-7);
  }

  // Identity at coincident times, cocycle over a sampled triple.
  CHECK((var.transition(1.3, 1.3) - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-12);
  const Mat lhs = var.transition(0.0, 1.9);
  const Mat rhs = var.transition(0.7, 1.9) * var.transition(0.0, 0.7);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("section crossings") {
  const auto H = make_momentum_model(1);
  Vec x0 = Vec::Zero(4);
  const auto traj = integrate_flow(H, x0, {0.0, 1.0}, FlowConfig<double>{});
  const auto hits = section_crossing<double>(
      traj, [](const Vec& x) { return x[0] - 0.5; }, CrossingDirection::Both);
  REQUIRE(hits.size() == 1);
  CHECK(std::abs(hits[0].time - 0.5) <= 1e-10);

  const auto Hw = make_convex_well();
  Vec y0(4);
  y0 << 0.0, 0.0, 1.0, 0.3;  // q2(t) = 0.3 sin(t - t_start)
  const double t_start = 0.2;
  const auto osc = integrate_flow(Hw, y0, {t_start, 10.0}, FlowConfig<double>{});
  const auto zeros = section_crossing<double>(
      osc, [](const Vec& x) { return x[1]; }, CrossingDirection::Both);
  REQUIRE(zeros.size() == 3);
  CHECK(std::abs(zeros[0].time - (t_start + pi<double>)) <= 1e-9);
  CHECK(std::abs(zeros[1].time - (t_start + 2.0 * pi<double>)) <= 1e-9);
  CHECK(std::abs(zeros[2].time - (t_start + 3.0 * pi<double>)) <= 1e-9);
  for (const auto& z : zeros) CHECK(std::abs(z.state[1]) <= 1e-10 * (1.0 + 0.3));

  const auto down = section_crossing<double>(
      osc, [](const Vec& x) { return x[1]; }, CrossingDirection::Negative);
  REQUIRE(down.size() == 2);
  CHECK(std::abs(down[0].time - (t_start + pi<double>)) <= 1e-9);
  CHECK(std::abs(down[1].time - (t_start + 3.0 * pi<double>)) <= 1e-9);
}

TEST_CASE("step underflow reports last good state") {
  // Free fall into a 1/q singularity.
  const auto H = make_custom(
      [](const Vec& x) { return 0.5 * x[1] * x[1] - 1.0 / x[0]; },
      Domain<double>::euclidean(1));
  Vec x0(2);
  x0 << 1.0, -1.5;
  bool threw = false;
  try {
    integrate_flow(H, x0, {0.0, 2.0}, FlowConfig<double>{});
  } catch (const FlowBreakdown<double>& e) {
    threw = true;
    CHECK(e.t_last > 0.0);
    CHECK(e.t_last < 2.0);
    CHECK(all_finite(e.x_last));
    CHECK(e.x_last[0] < 1.0);  // fell toward the singularity
  }
  CHECK(threw);
}

TEST_CASE("trajectory from samples") {
  std::vector<double> ts;
  std::vector<Vec> xs;
  for (int i = 0; i <= 200; ++i) {
    const double t = 0.05 * i;
    Vec x(2);
    x << std::sin(t), std::cos(t);
    ts.push_back(t);
    xs.push_back(x);
  }
  const auto traj = Trajectory<double>::from_samples(ts, xs);
  for (double t : {0.123, 3.71, 9.987}) {
    CHECK(std::abs(traj.state(t)[0] - std::sin(t)) <= 1e-4);
    CHECK(std::abs(traj.state(t)[1] - std::cos(t)) <= 1e-4);
  }
  CHECK_THROWS_AS(traj.state(-1.0), EvaluationError);
}

TEST_CASE("trajectory export") {
  const auto H = make_momentum_model(1);
  Vec x0 = Vec::Zero(4);
  const auto traj = integrate_flow(H, x0, {0.0, 1.0}, FlowConfig<double>{});
  const std::string path = "test_flow_export.tsv";
  export_trajectory_tsv(traj, path, 11);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    ++rows;
    double t, q1, q2, p1, p2;
    const int got = std::sscanf(line.c_str(), "%lf\t%lf\t%lf\t%lf\t%lf", &t, &q1,
                                &q2, &p1, &p2);
    CHECK(got == 5);
    CHECK(std::abs(q1 - t) <= 1e-10);
  }
  CHECK(rows == 11);
  std::remove(path.c_str());
}
