// Phase-space types, Hamiltonian models, symplectic structure, degeneracy tests.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <manekit/geometry.hpp>
#include <manekit/hamiltonian.hpp>
#include <manekit/models.hpp>
#include <manekit/types.hpp>

#include <random>

using namespace manekit;

namespace {

// Independent central-difference oracle for gradients of a scalar function.
// Kept self-contained so library finite differences are never tested against
// themselves.
template <typename F>
Vec fd_gradient_oracle(F&& f, const Vec& x, double h0 = 1e-6) {
  Vec g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    const double h = h0 * (1.0 + std::abs(x[i]));
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

Vec random_vec(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

// Random fiberwise-quadratic model with trigonometric coefficient fields and
// analytic derivatives. det(G) != 0 is checked by the caller where needed.
Hamiltonian<double> random_trig_quadratic(std::mt19937_64& rng, int base_dim,
                                          bool indefinite) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat a0 = Mat::Identity(base_dim, base_dim);
  if (indefinite) a0(base_dim - 1, base_dim - 1) = -1.0;
  Mat amp = Mat::Zero(base_dim, base_dim);
  Vec freq(base_dim), phase(1);
  for (int i = 0; i < base_dim; ++i)
    for (int j = 0; j <= i; ++j) {
      amp(i, j) = 0.15 * dist(rng);
      amp(j, i) = amp(i, j);
    }
  for (int i = 0; i < base_dim; ++i) freq[i] = dist(rng);
  phase[0] = dist(rng);
  TrigSymMatrixField<double> G;
  G.constant = a0;
  G.terms.push_back({amp, freq, phase[0]});
  TrigScalarField<double> V;
  V.constant = 0.3 * dist(rng);
  V.terms.push_back({0.4 * dist(rng), random_vec(rng, base_dim), dist(rng)});
  return make_fiberwise_quadratic(G, V, Domain<double>::euclidean(base_dim));
}

}  // namespace

TEST_CASE("standard symplectic form") {
  const Mat j1 = standard_symplectic_form<double>(1);
  Mat j1_expected(2, 2);
  j1_expected << 0, 1, -1, 0;
  CHECK((j1 - j1_expected).cwiseAbs().maxCoeff() == 0.0);

  const Mat j2 = standard_symplectic_form<double>(2);
  CHECK(j2.rows() == 4);
  CHECK((j2 * j2 + Mat::Identity(4, 4)).cwiseAbs().maxCoeff() == 0.0);

  for (int d : {1, 2, 3, 5}) {
    const Mat j = standard_symplectic_form<double>(d);
    CHECK((j.transpose() * j - Mat::Identity(2 * d, 2 * d)).cwiseAbs().maxCoeff() == 0.0);
  }

  CHECK_THROWS_AS(standard_symplectic_form<double>(0), DimensionError);
}

TEST_CASE("phase point validation") {
  PhasePoint<double> x;
  x.q = Vec::Zero(2);
  x.p = Vec::Zero(2);
  CHECK_NOTHROW(x.validate());
  CHECK(x.dim() == 2);

  PhasePoint<double> bad = x;
  bad.p = Vec::Zero(3);
  CHECK_THROWS_AS(bad.validate(), DimensionError);

  PhasePoint<double> nan_pt = x;
  nan_pt.q[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(nan_pt.validate(), EvaluationError);

  const Vec flat = x.to_vector();
  CHECK(flat.size() == 4);
  const auto back = PhasePoint<double>::from_vector(flat);
  CHECK(back.q == x.q);
}

TEST_CASE("hamiltonian vector field: momentum-linear model") {
  const auto H = make_momentum_linear(Domain<double>::cylinder(3));
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec x = random_vec(rng, 6);
    const Vec f = hamiltonian_vector_field(H, x);
    Vec expected = Vec::Zero(6);
    expected[0] = 1.0;
    CHECK((f - expected).cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-14));
  }
}

TEST_CASE("hamiltonian vector field: free quadratic") {
  const auto H = make_natural(Mat::Identity(2, 2), TrigScalarField<double>{},
                              Domain<double>::euclidean(2));
  Vec x(4);
  x << 0, 0, 1, 0;
  const Vec f = hamiltonian_vector_field(H, x);
  Vec expected(4);
  expected << 1, 0, 0, 0;
  CHECK((f - expected).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("hamiltonian vector field matches finite-difference oracle") {
  std::mt19937_64 rng(11);
  const Mat j_full = standard_symplectic_form<double>(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto H = random_trig_quadratic(rng, 2, trial % 2 == 1);
    const Vec x = random_vec(rng, 4);
    const Vec f = hamiltonian_vector_field(H, x);
    const Vec grad_fd =
        fd_gradient_oracle([&](const Vec& y) { return H.value(y); }, x);
    const Vec f_fd = j_full * grad_fd;
    CHECK((f - f_fd).cwiseAbs().maxCoeff() <= 1e-6 * (1.0 + f.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("add_potential: exact sums, fiber derivatives unchanged") {
  std::mt19937_64 rng(23);
  const auto H = random_trig_quadratic(rng, 2, false);

  TrigScalarField<double> zero_field;
  const auto u0 = make_trig_potential(zero_field, Domain<double>::euclidean(2));
  const auto H_same = add_potential(H, u0);

  TrigScalarField<double> wf;
  wf.constant = 0.2;
  wf.terms.push_back({0.7, random_vec(rng, 2), 0.3});
  const auto u = make_trig_potential(wf, Domain<double>::euclidean(2));
  const auto Hu = add_potential(H, u);

  for (int trial = 0; trial < 100; ++trial) {
    const Vec x = random_vec(rng, 4);
    CHECK(H_same.value(x) == doctest::Approx(H.value(x)).epsilon(1e-15));
    CHECK((H_same.gradient(x) - H.gradient(x)).cwiseAbs().maxCoeff() <= 1e-14);

    // u depends on q only: fiber block of the Hessian is untouched.
    const Mat hh = H.hessian(x);
    const Mat hu = Hu.hessian(x);
    CHECK((hu.block(2, 2, 2, 2) - hh.block(2, 2, 2, 2)).cwiseAbs().maxCoeff() <= 1e-12);

    const Vec dg = Hu.gradient(x) - H.gradient(x);
    const Vec du = u.gradient(x.head(2));
    CHECK((dg.head(2) - du).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(dg.tail(2).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("fiberwise test: zero fiber derivative is degenerate") {
  const auto H = make_natural(Mat::Identity(2, 2), TrigScalarField<double>{},
                              Domain<double>::euclidean(2));
  Vec x = Vec::Zero(4);  // p = 0
  const auto res = fiberwise_iso_energetic_test(H, x);
  CHECK(res.det_value == doctest::Approx(0.0).epsilon(1e-14));
  CHECK_FALSE(res.non_degenerate);
}

TEST_CASE("fiberwise test: saddle quadratic frozen 3x3 determinant") {
  // H = (p1^2 - p2^2)/2 + q2^2/2 - 1/2 at x = (0,0,1,0).
  // Bordered matrix [[1,0,1],[0,-1,0],[1,0,0]]; cofactor expansion along the
  // first row gives 1*((-1)*0-0*0) - 0 + 1*(0*0-(-1)*1) = 1.
  const auto H = make_saddle_quadratic_d1();
  Vec x(4);
  x << 0, 0, 1, 0;

  const Mat b = bordered_fiber_matrix(H, x);
  Mat expected(3, 3);
  expected << 1, 0, 1, 0, -1, 0, 1, 0, 0;
  CHECK((b - expected).cwiseAbs().maxCoeff() <= 1e-12);

  const auto res = fiberwise_iso_energetic_test(H, x);
  CHECK(res.det_value == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(res.non_degenerate);
}

TEST_CASE("fiberwise test: quadratic determinant identity") {
  // For H = p^T G(q) p / 2 the bordered determinant equals -2 det(G) H.
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const int d1 = 2 + (trial % 2);
    auto H = random_trig_quadratic(rng, d1, trial % 2 == 0);
    H = strip_base_potential(H);
    const Vec x = random_vec(rng, 2 * d1);
    const Mat G = H.hessian(x).block(d1, d1, d1, d1);
    if (std::abs(G.determinant()) < 1e-3) continue;
    const auto res = fiberwise_iso_energetic_test(H, x);
    const double expected = -2.0 * G.determinant() * H.value(x);
    const double scale =
        1.0 + std::abs(G.determinant()) * x.tail(d1).squaredNorm();
    CHECK(std::abs(res.det_value - expected) <= 1e-8 * scale);
    if (std::abs(H.value(x)) > 1e-6) {
      CHECK(res.det_value * expected > 0.0);  // matching signs off the zero level
    }
  }
}

TEST_CASE("reversibility check") {
  std::mt19937_64 rng(41);
  std::vector<Vec> samples;
  for (int i = 0; i < 25; ++i) samples.push_back(random_vec(rng, 4));

  TrigScalarField<double> vf;
  vf.terms.push_back({0.8, random_vec(rng, 2), 0.1});
  const auto natural = make_natural(Mat::Identity(2, 2), vf, Domain<double>::euclidean(2));
  CHECK(reversibility_check(natural, samples, 1e-12));

  const auto p1 = make_momentum_linear(Domain<double>::cylinder(2));
  CHECK_FALSE(reversibility_check(p1, samples, 1e-8));

  // H = (p1^2 - p2^2)/2 + q1 p2 is odd in p through the q1 p2 coupling.
  const auto mixed = make_custom(
      [](const Vec& x) {
        return 0.5 * (x[2] * x[2] - x[3] * x[3]) + x[0] * x[3];
      },
      Domain<double>::euclidean(2));
  CHECK_FALSE(reversibility_check(mixed, samples, 1e-8));
}

TEST_CASE("hessian symmetry and energy conservation identities") {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 10; ++trial) {
    const auto H = random_trig_quadratic(rng, 2, trial % 2 == 1);
    for (int k = 0; k < 10; ++k) {
      const Vec x = random_vec(rng, 4);
      const Mat hess = H.hessian(x);
      CHECK((hess - hess.transpose()).cwiseAbs().maxCoeff() <=
            1e-10 * (1.0 + hess.cwiseAbs().maxCoeff()));
      const Vec g = H.gradient(x);
      const Vec f = hamiltonian_vector_field(H, x);
      CHECK(std::abs(g.dot(f)) <= 1e-12 * (1.0 + g.squaredNorm()));
    }
  }
}

TEST_CASE("finite-difference derivative mode approximates analytic derivatives") {
  std::mt19937_64 rng(61);
  const auto H = random_trig_quadratic(rng, 2, false);
  const auto H_fd = make_custom([&](const Vec& x) { return H.value(x); },
                                Domain<double>::euclidean(2));
  for (int k = 0; k < 10; ++k) {
    const Vec x = random_vec(rng, 4);
    CHECK((H_fd.gradient(x) - H.gradient(x)).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((H_fd.hessian(x) - H.hessian(x)).cwiseAbs().maxCoeff() <= 1e-4);
  }
}

TEST_CASE("symplectic and hamiltonian matrix wrappers") {
  Mat rot(2, 2);
  const double c = std::cos(0.7), s = std::sin(0.7);
  rot << c, s, -s, c;
  CHECK_NOTHROW(SympMatrix<double>{rot});
  CHECK(SympMatrix<double>(rot).residual() <= 1e-14);

  Mat not_symp = Mat::Identity(2, 2) * 1.5;
  CHECK_THROWS_AS(SympMatrix<double>{not_symp}, NumericalFailure);

  Mat w(2, 2);
  w << 1.0, 0.3, 2.0, -1.0;  // J w symmetric: traceless 2x2 works
  CHECK_NOTHROW(HamMatrix<double>{w});
  Mat bad = w;
  bad(1, 1) = 0.5;
  CHECK_THROWS_AS(HamMatrix<double>{bad}, NumericalFailure);
}

TEST_CASE("domain wrapping") {
  const auto dom = Domain<double>::cylinder(2);  // q1 periodic with period 2*pi
  Vec a(2), b(2);
  a << 0.1, 0.4;
  b << 0.1 + 4.0 * pi<double>, 0.4;
  const Vec delta = dom.wrap_delta(b, a);
  CHECK(delta.cwiseAbs().maxCoeff() <= 1e-12);
}
