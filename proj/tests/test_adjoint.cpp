#include "pdeinv/adjoint.hpp"

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

struct Case {
  Mesh mesh;
  ObservationSet obs;
  Vector u;
};

std::vector<Case> cases() {
  std::vector<Case> out;
  std::mt19937_64 rng(1234);
  for (int n : {2, 5, 17}) {
    const int elements = n - 1;
    const int k = n == 2 ? 1 : 3;
    for (int trial = 0; trial < 3; ++trial) {
      Case c{Mesh(elements), spread_observations(k, 0.1, rng), {}};
      c.u = random_vector(n, rng, 0.7);
      out.push_back(c);
    }
  }
  return out;
}

double misfit_at(DerivativeWorkspace& ws, const Vector& u) {
  ws.set_point(u);
  return ws.misfit();
}

Vector observed(const Case& c, const Vector& u) {
  SolveCounter counter;
  return observe(c.mesh, solve_forward(c.mesh, u, kDefaultBiot, counter), c.obs.locations);
}

double fisher_form(DerivativeWorkspace& ws, const Vector& u, const Vector& v1, const Vector& v2) {
  ws.set_point(u);
  return v1.dot(ws.fisher_vector(v2));
}

}  // namespace

TEST_CASE("adjoint solution") {
  const Case c = cases()[4];
  DerivativeWorkspace ws(c.mesh, c.obs, kDefaultBiot);
  ws.set_point(c.u);
  const Vector& lambda = ws.adjoint();
  const Vector r = ws.residual();
  const PointObservation b(c.mesh, c.obs.locations);
  const Vector rhs = -b.apply_transpose(r) / (c.obs.noise_std * c.obs.noise_std);
  CHECK((ws.forward().op->matrix().apply(lambda) - rhs).norm() <= 1e-10 * rhs.norm());

  // Zero residual gives a zero adjoint and gradient.
  ObservationSet exact = c.obs;
  exact.data = observed(c, c.u);
  DerivativeWorkspace zero(c.mesh, exact, kDefaultBiot);
  zero.set_point(c.u);
  CHECK(zero.adjoint().norm() == 0.0);
  CHECK(zero.misfit_gradient().norm() == 0.0);
}

TEST_CASE("two-node hand computations") {
  const Mesh mesh(1);
  ObservationSet left;
  left.locations = {0.0};
  left.noise_std = 0.1;
  left.data = Vector::Constant(1, 10.4);
  DerivativeWorkspace ws(mesh, left, 0.1);
  ws.set_point(Vector::Zero(2));
  // w = (10, 11); lambda = -(r / sigma^2) A^{-1} e_0 = -(-40)(10, 10): constant, so the gradient vanishes.
  CHECK(ws.adjoint()[0] == doctest::Approx(400.0).epsilon(1e-12));
  CHECK(ws.adjoint()[1] == doctest::Approx(400.0).epsilon(1e-12));
  CHECK(ws.misfit_gradient().cwiseAbs().maxCoeff() <= 1e-12 * 400.0);

  ObservationSet right = left;
  right.locations = {1.0};
  right.data = Vector::Constant(1, 10.6);
  DerivativeWorkspace wr(mesh, right, 0.1);
  wr.set_point(Vector::Zero(2));
  // r = 0.4, lambda = -40 (10, 11), lambda' = -40, w' = 1: g_i = int phi_i (-40) = -20.
  const Vector g = wr.misfit_gradient();
  CHECK(g[0] == doctest::Approx(-20.0).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(-20.0).epsilon(1e-12));
}

TEST_CASE("gradient, Hessian and Fisher against finite differences") {
  for (const Case& c : cases()) {
    const auto n = c.mesh.n_nodes();
    DerivativeWorkspace ws(c.mesh, c.obs, kDefaultBiot);
    ws.set_point(c.u);
    const Vector g = ws.misfit_gradient();
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector e = Vector::Unit(n, i);
      const double fd = (misfit_at(ws, c.u + h * e) - misfit_at(ws, c.u - h * e)) / (2 * h);
      CHECK(std::abs(fd - g[i]) <= 1e-5 * std::max(std::abs(g[i]), 1e-8));
    }

    std::mt19937_64 rng(n);
    const Vector v = random_vector(n, rng), z = random_vector(n, rng);
    ws.set_point(c.u);
    const Vector hv = ws.hessian_vector(v);
    const Vector hz = ws.hessian_vector(z);
    CHECK(std::abs(hv.dot(z) - v.dot(hz)) <= 1e-10 * std::max(std::abs(hv.dot(z)), 1e-12));

    ws.set_point(c.u + h * v);
    const Vector gp = ws.misfit_gradient();
    ws.set_point(c.u - h * v);
    const Vector gm = ws.misfit_gradient();
    CHECK(rel_err(Vector((gp - gm) / (2 * h)), hv) <= 1e-4);

    // Fisher equals the Gram matrix of the finite-difference observation Jacobian.
    Matrix jac(c.obs.size(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector e = Vector::Unit(n, i);
      jac.col(i) = (observed(c, c.u + h * e) - observed(c, c.u - h * e)) / (2 * h);
    }
    const Matrix gram = jac.transpose() * jac / (c.obs.noise_std * c.obs.noise_std);
    ws.set_point(c.u);
    const Matrix fisher = ws.assemble_fisher();
    CHECK((fisher - gram).norm() <= 1e-4 * gram.norm());
    CHECK(v.dot(ws.fisher_vector(v)) >= -1e-12);

    Eigen::SelfAdjointEigenSolver<Matrix> eig(fisher);
    const Vector ev = eig.eigenvalues();
    const auto k = static_cast<Eigen::Index>(c.obs.size());
    if (k < n) CHECK(ev[n - k - 1] <= 1e-10 * ev[n - 1]);
    CHECK(ev.minCoeff() >= -1e-10 * ev.maxCoeff());
  }
}

TEST_CASE("Fisher equals the full Hessian at zero residual") {
  for (const Case& base : cases()) {
    Case c = base;
    c.obs.data = observed(c, c.u);
    DerivativeWorkspace ws(c.mesh, c.obs, kDefaultBiot);
    ws.set_point(c.u);
    const Matrix f = ws.assemble_fisher();
    const Matrix hfull = ws.assemble_hessian();
    CHECK((f - hfull).cwiseAbs().maxCoeff() <= 1e-10 * f.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("assembled Fisher stacks Fisher-vector products") {
  const Case c = cases()[5];
  DerivativeWorkspace ws(c.mesh, c.obs, kDefaultBiot);
  ws.set_point(c.u);
  const Matrix f = ws.assemble_fisher();
  for (Eigen::Index k = 0; k < f.cols(); ++k)
    CHECK((f.col(k) - ws.fisher_vector(Vector::Unit(f.rows(), k))).cwiseAbs().maxCoeff() <= 1e-12 * f.cwiseAbs().maxCoeff());
}

TEST_CASE("third-derivative tensor") {
  for (const Case& c : cases()) {
    const auto n = c.mesh.n_nodes();
    DerivativeWorkspace ws(c.mesh, c.obs, kDefaultBiot);
    ws.set_point(c.u);
    std::mt19937_64 rng(77 + n);
    const Vector v1 = random_vector(n, rng), v2 = random_vector(n, rng), v3 = random_vector(n, rng);
    const double t123 = ws.third_tensor_action(v1, v2, v3);
    const double t213 = ws.third_tensor_action(v2, v1, v3);
    CHECK(rel_err(t123, t213, 1e-12) <= 1e-9);

    const double h = 1e-5;
    const double fd = (fisher_form(ws, c.u + h * v3, v1, v2) - fisher_form(ws, c.u - h * v3, v1, v2)) / (2 * h);
    CHECK(rel_err(fd, t123, 1e-8) <= 1e-4);

    if (n <= 5) {
      ws.set_point(c.u);
      for (Eigen::Index k = 0; k < n; ++k) {
        const Matrix dg = ws.metric_derivative(static_cast<int>(k));
        const Vector e = Vector::Unit(n, k);
        ws.set_point(c.u + h * e);
        const Matrix fp = ws.assemble_fisher();
        ws.set_point(c.u - h * e);
        const Matrix fm = ws.assemble_fisher();
        ws.set_point(c.u);
        CHECK(((fp - fm) / (2 * h) - dg).norm() <= 1e-4 * std::max(dg.norm(), 1e-8));
        CHECK((dg - dg.transpose()).cwiseAbs().maxCoeff() == 0.0);
      }
    }
  }
}

TEST_CASE("tensor is not symmetric in its last two slots") {
  const Mesh mesh(1);
  ObservationSet obs;
  obs.locations = {1.0};
  obs.noise_std = 0.1;
  obs.data = Vector::Constant(1, 10.0);
  DerivativeWorkspace ws(mesh, obs, kDefaultBiot);
  ws.set_point(Vector{{0.4, -0.8}});
  const Vector e0 = Vector::Unit(2, 0), e1 = Vector::Unit(2, 1);
  const double a = ws.third_tensor_action(e0, e0, e1);
  const double b = ws.third_tensor_action(e0, e1, e0);
  CHECK(rel_err(a, b, 1e-12) > 1e-3);
}

TEST_CASE("solve accounting") {
  const Case c = cases()[3];
  const auto n = c.mesh.n_nodes();
  DerivativeWorkspace ws(c.mesh, c.obs, kDefaultBiot);
  ws.set_point(c.u);
  ws.misfit_gradient();
  CHECK(ws.solves() == 2);
  ws.misfit_gradient();
  CHECK(ws.solves() == 2);
  const Vector v = Vector::LinSpaced(n, -1.0, 1.0);
  ws.hessian_vector(v);
  CHECK(ws.solves() == 4);
  ws.fisher_vector(v);
  CHECK(ws.solves() == 6);
  const FisherDirection d = ws.fisher_direction(v);
  CHECK(ws.solves() == 8);
  ws.third_tensor_action(v, d, v);
  CHECK(ws.solves() == 11);
  ws.assemble_fisher();
  CHECK(ws.solves() == 11 + 2 * n);
  ws.metric_derivative(0);
  CHECK(ws.solves() == 11 + 2 * n + 3 * n * n);

  ws.set_point(c.u + v);
  ws.misfit();
  CHECK(ws.solves() == 12 + 2 * n + 3 * n * n);

  ws.metric_derivative_cap = 3;
  CHECK_THROWS_AS(ws.metric_derivative(0), std::invalid_argument);
}

TEST_CASE("parallel kernels agree with the serial reference") {
  const Case c = cases()[7];
  DerivativeWorkspace a(c.mesh, c.obs, kDefaultBiot), b(c.mesh, c.obs, kDefaultBiot);
  a.set_point(c.u);
  b.set_point(c.u);
  CHECK(a.assemble_fisher(Execution::serial) == b.assemble_fisher(Execution::parallel));
  CHECK(a.assemble_hessian(Execution::serial) == b.assemble_hessian(Execution::parallel));
  CHECK(a.metric_derivative(2, Execution::serial) == b.metric_derivative(2, Execution::parallel));
  CHECK(a.solves() == b.solves());
}
