#include "pdeinv/metric.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <Eigen/Eigenvalues>

using namespace pdeinv;
using pdeinv::testing::random_vector;
using pdeinv::testing::rel_err;
using pdeinv::testing::spread_observations;

namespace {

struct Setup {
  Mesh mesh;
  PriorBasis prior;
  ObservationSet obs;
  Vector u;
};

Setup make_setup(int elements, int k, double alpha, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Setup s{Mesh(elements), {}, spread_observations(k, 0.05, rng), {}};
  s.prior = build_prior(s.mesh, 0.6, alpha);
  s.u = random_vector(s.mesh.n_nodes(), rng, 0.5);
  return s;
}

Vector observed(const Setup& s, const Vector& u) {
  SolveCounter counter;
  return observe(s.mesh, solve_forward(s.mesh, u, kDefaultBiot, counter), s.obs.locations);
}

}  // namespace

TEST_CASE("prior-only metric") {
  Setup s = make_setup(8, 1, 2.0, 1);
  s.obs.locations = {0.0};  // uninformative: Bi w(0) = 1 for every u
  DerivativeWorkspace ws(s.mesh, s.obs, kDefaultBiot);
  const Metric g = build_exact(ws, s.prior, s.u);
  const Matrix prec = precision_matrix(s.prior);
  CHECK((g.matrix() - prec).norm() <= 1e-10 * prec.norm());
  const Matrix cov = s.prior.V * s.prior.lambda.array().square().matrix().asDiagonal() * s.prior.V.transpose() / 2.0;
  std::mt19937_64 rng(5);
  const Vector v = random_vector(9, rng);
  CHECK((g.solve(g.apply(v)) - v).norm() <= 1e-10 * v.norm());
  CHECK((g.solve(v) - cov * v).norm() <= 1e-10 * (cov * v).norm());

  // logdet additivity under alpha.
  Setup t = s;
  t.prior = build_prior(t.mesh, 0.6, 4.0);
  DerivativeWorkspace wt(t.mesh, t.obs, kDefaultBiot);
  const Metric g2 = build_exact(wt, t.prior, t.u);
  CHECK(g2.logdet() - g.logdet() == doctest::Approx(9 * std::log(2.0)).epsilon(1e-10));
}

TEST_CASE("alpha enters the exact metric linearly") {
  Setup a = make_setup(6, 3, 1.0, 2);
  Setup b = a;
  b.prior = build_prior(b.mesh, 0.6, 2.0);
  DerivativeWorkspace wa(a.mesh, a.obs, kDefaultBiot), wb(b.mesh, b.obs, kDefaultBiot);
  const Matrix diff = build_exact(wb, b.prior, b.u).matrix() - build_exact(wa, a.prior, a.u).matrix();
  const Matrix prec = precision_matrix(a.prior);
  CHECK((diff - prec).cwiseAbs().maxCoeff() <= 1e-12 * prec.cwiseAbs().maxCoeff());
}

TEST_CASE("fixed variants") {
  Setup s = make_setup(12, 4, 1.0, 3);
  DerivativeWorkspace ws(s.mesh, s.obs, kDefaultBiot);
  const Metric exact = build_exact(ws, s.prior, s.u);
  const Metric gn = build_fixed(ws, s.prior, s.u, {FixedMetricKind::gauss_newton});
  CHECK(exact.matrix() == gn.matrix());

  // Zero residual: all dense variants coincide; full rank low-rank reproduces them.
  Setup z = s;
  z.obs.data = observed(z, z.u);
  DerivativeWorkspace wz(z.mesh, z.obs, kDefaultBiot);
  const Metric zgn = build_fixed(wz, z.prior, z.u, {FixedMetricKind::gauss_newton});
  const Metric zfull = build_fixed(wz, z.prior, z.u, {FixedMetricKind::full_hessian});
  CHECK((zgn.matrix() - zfull.matrix()).cwiseAbs().maxCoeff() <= 1e-10 * zgn.matrix().cwiseAbs().maxCoeff());

  FixedMetricSpec spec{FixedMetricKind::low_rank, static_cast<int>(z.mesh.n_nodes()), 0, 9};
  const Metric lr = build_fixed(wz, z.prior, z.u, spec);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Vector v = random_vector(z.mesh.n_nodes(), rng);
    CHECK(rel_err(lr.apply(v), zgn.apply(v)) <= 1e-8);
  }

  CHECK(parse_fixed_metric_kind("fixed_lowrank") == FixedMetricKind::low_rank);
  CHECK(to_string(FixedMetricKind::full_hessian) == "fixed_full");
  CHECK_THROWS_AS(parse_fixed_metric_kind("bogus"), std::invalid_argument);
}

TEST_CASE("every variant inverts itself") {
  Setup s = make_setup(16, 5, 1.0, 6);
  DerivativeWorkspace ws(s.mesh, s.obs, kDefaultBiot);
  std::vector<Metric> metrics;
  metrics.push_back(build_exact(ws, s.prior, s.u));
  metrics.push_back(build_fixed(ws, s.prior, s.u, {FixedMetricKind::gauss_newton}));
  metrics.push_back(build_fixed(ws, s.prior, s.u, {FixedMetricKind::low_rank, 5, 3, 1}));
  std::mt19937_64 rng(9);
  for (const Metric& g : metrics) {
    for (int trial = 0; trial < 5; ++trial) {
      const Vector v = random_vector(17, rng);
      CHECK(rel_err(g.apply(g.solve(v)), v) <= 1e-8);
      CHECK(v.dot(g.solve(v)) > 0.0);
    }
    CHECK((g.inverse() * g.to_dense() - Matrix::Identity(17, 17)).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("Woodbury form on a synthetic exact-rank spectrum") {
  const Mesh mesh(10);
  const PriorBasis prior = build_prior(mesh, 0.7, 3.0);
  std::mt19937_64 rng(12);
  Eigen::HouseholderQR<Matrix> qr(Matrix::NullaryExpr(11, 3, [&]() { return std::normal_distribution<double>()(rng); }));
  const Matrix vr = qr.householderQ() * Matrix::Identity(11, 3);
  const Vector sv{{1.0, 5.0, 0.25}};
  const Metric g = Metric::low_rank(prior, vr, sv);
  const Matrix dense = g.to_dense();
  const Vector v = random_vector(11, rng);
  CHECK(rel_err(g.apply(g.solve(v)), v) <= 1e-12);
  CHECK(rel_err(g.solve(v), Vector(dense.ldlt().solve(v))) <= 1e-10);
  CHECK(g.logdet() == doctest::Approx(std::log(dense.determinant())).epsilon(1e-10));
  CHECK(std::abs(g.logdet() - std::log(dense.determinant())) <= 1e-6);

  // D = S / (S + 1): a unit spectral value halves that direction in the whitened inverse.
  const Metric unit = Metric::low_rank(prior, vr.leftCols(1), Vector::Ones(1));
  const Matrix w = prior.lambda.cwiseInverse().asDiagonal() * prior.mass_v.transpose();
  const Matrix whitened = prior.alpha * w * unit.inverse() * w.transpose();
  CHECK(vr.col(0).dot(whitened * vr.col(0)) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(vr.col(1).dot(whitened * vr.col(1)) == doctest::Approx(1.0).epsilon(1e-12));

  Matrix skew = vr;
  skew(0, 0) += 0.1;
  CHECK_THROWS_AS(Metric::low_rank(prior, skew, sv), std::invalid_argument);
}

TEST_CASE("low-rank error shrinks with rank") {
  Setup s = make_setup(64, 12, 1.0, 15);
  DerivativeWorkspace ws(s.mesh, s.obs, kDefaultBiot);
  const Metric dense = build_exact(ws, s.prior, s.u);
  std::mt19937_64 rng(3);
  std::vector<Vector> probes;
  for (int i = 0; i < 20; ++i) probes.push_back(random_vector(65, rng));
  double previous = std::numeric_limits<double>::infinity();
  for (int r : {5, 10, 20}) {
    const Metric lr = build_fixed(ws, s.prior, s.u, {FixedMetricKind::low_rank, r, 10, 21});
    double err = 0.0;
    for (const Vector& v : probes) err += (dense.apply(v) - lr.apply(v)).norm() / v.norm();
    CHECK(err <= previous);
    previous = err;
  }
}

TEST_CASE("randomized eigendecomposition") {
  Setup s = make_setup(64, 12, 1.0, 16);
  DerivativeWorkspace ws(s.mesh, s.obs, kDefaultBiot);
  ws.set_point(s.u);
  const Matrix ht = prior_preconditioned(s.prior, ws.assemble_fisher());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(ht);
  const Vector exact = eig.eigenvalues().reverse();

  std::mt19937_64 rng(2);
  const std::int64_t before = ws.solves();
  const LowRankFactor f = rsvd_prior_preconditioned(ws, s.prior, s.u, 8, 0, rng);
  CHECK(ws.solves() - before == 2 * 8 * (f.restarts + 1));
  CHECK(f.restarts == 0);
  CHECK((f.basis.transpose() * f.basis - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff() <= 1e-10);
  // Rank 12 data: with r = 8 < 12 take oversampling to capture the top values accurately.
  const LowRankFactor g = rsvd_prior_preconditioned(ws, s.prior, s.u, 8, 6, rng);
  for (int i = 0; i < 8; ++i) CHECK(rel_err(g.values[i], exact[i]) <= 1e-2);
  for (int i = 1; i < 8; ++i) CHECK(g.values[i] <= g.values[i - 1]);

  std::mt19937_64 again(2);
  const LowRankFactor f2 = rsvd_prior_preconditioned(ws, s.prior, s.u, 8, 0, again);
  CHECK(f2.values == f.values);
  CHECK_THROWS_AS(rsvd_prior_preconditioned(ws, s.prior, s.u, 60, 10, rng), std::invalid_argument);
}

TEST_CASE("momentum draws have covariance G") {
  Setup s = make_setup(4, 2, 0.5, 20);
  DerivativeWorkspace ws(s.mesh, s.obs, kDefaultBiot);
  std::vector<Metric> metrics;
  metrics.push_back(build_exact(ws, s.prior, s.u));
  metrics.push_back(build_fixed(ws, s.prior, s.u, {FixedMetricKind::low_rank, 2, 0, 3}));
  for (const Metric& g : metrics) {
    std::mt19937_64 rng(31);
    const int draws = 100000;
    const auto n = g.size();
    Vector mean = Vector::Zero(n);
    Matrix acc = Matrix::Zero(n, n), acc2 = Matrix::Zero(n, n);
    double energy = 0.0, energy2 = 0.0;
    for (int k = 0; k < draws; ++k) {
      const Vector p = g.sample_momentum(rng);
      mean += p;
      const Matrix outer = p * p.transpose();
      acc += outer;
      acc2 += outer.cwiseProduct(outer);
      const double e = 0.5 * p.dot(g.solve(p));
      energy += e;
      energy2 += e * e;
    }
    mean /= draws;
    const Matrix cov = acc / draws;
    const Matrix se = ((acc2 / draws - cov.cwiseProduct(cov)) / draws).cwiseSqrt();
    const Matrix target = g.to_dense();
    int outside = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) outside += std::abs(cov(i, j) - target(i, j)) > 3.0 * se(i, j);
    CHECK(outside <= 1);
    const Vector sd = target.diagonal().cwiseSqrt() / std::sqrt(static_cast<double>(draws));
    CHECK((mean.cwiseAbs().array() <= 3.0 * sd.array()).count() >= n - 1);
    energy /= draws;
    const double se_e = std::sqrt((energy2 / draws - energy * energy) / draws);
    CHECK(std::abs(energy - 0.5 * static_cast<double>(n)) <= 3.0 * se_e);
  }
}

TEST_CASE("metric derivatives are the Fisher derivatives") {
  Setup s = make_setup(2, 2, 1.0, 40);
  DerivativeWorkspace ws(s.mesh, s.obs, kDefaultBiot);
  const auto d = metric_derivatives(ws, s.u);
  REQUIRE(d.size() == 3);
  const double h = 1e-5;
  for (int k = 0; k < 3; ++k) {
    const Vector e = Vector::Unit(3, k);
    const Matrix fd = (build_exact(ws, s.prior, s.u + h * e).matrix() - build_exact(ws, s.prior, s.u - h * e).matrix()) / (2 * h);
    CHECK((fd - d[static_cast<std::size_t>(k)]).norm() <= 1e-4 * d[static_cast<std::size_t>(k)].norm());
  }
}

TEST_CASE("indefinite matrices are reported") {
  CHECK_THROWS_AS(Metric::dense(Matrix{{1.0, 2.0}, {2.0, 1.0}}), IndefiniteMatrixError);
}
