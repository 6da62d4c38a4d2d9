#include "pdeinv/map_optimizer.hpp"
#include "pdeinv/metric.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

using namespace pdeinv;
using pdeinv::testing::spread_observations;

namespace {

ObservationSet config_a_observations() {
  ObservationSet obs;
  obs.locations = {1.0};
  obs.noise_std = 0.1;
  obs.data = Vector::Constant(1, 10.5);
  return obs;
}

}  // namespace

TEST_CASE("MAP of the two-parameter problem") {
  const Mesh mesh(1);
  const PriorBasis prior = build_prior(mesh, 0.6, 0.1);
  const ObservationSet obs = config_a_observations();
  DerivativeWorkspace ws(mesh, obs, kDefaultBiot);
  const MapResult r = find_map(ws, prior, Vector::Zero(2), {.rtol = 0.0});
  CHECK(r.gradient_norm <= 1e-8);
  ws.set_point(r.u);
  CHECK((ws.misfit_gradient() + prior_gradient(prior, r.u)).norm() <= 1e-8);
  for (std::size_t i = 1; i < r.objective_history.size(); ++i)
    CHECK(r.objective_history[i] <= r.objective_history[i - 1] + 1e-12 * std::abs(r.objective_history[i - 1]));

  // Symmetric posterior: the two nodes agree.
  CHECK(r.u[0] == doctest::Approx(r.u[1]).epsilon(1e-8));

  const Matrix h = ws.assemble_hessian() + precision_matrix(prior);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(h);
  CHECK(eig.eigenvalues()[0] > 0.0);

  // Local minimum: nearby points are no better.
  std::mt19937_64 rng(3);
  for (int k = 0; k < 20; ++k) {
    const Vector trial = r.u + pdeinv::testing::random_vector(2, rng, 1e-3);
    ws.set_point(trial);
    CHECK(ws.misfit() + prior_neg_log(prior, trial) >= r.objective - 1e-12 * std::abs(r.objective));
  }
}

TEST_CASE("MAP on a fine mesh") {
  const Mesh mesh(128);
  const PriorBasis prior = build_prior(mesh, 0.6, 1.0);
  std::mt19937_64 rng(5);
  const ObservationSet obs = spread_observations(16, 0.05, rng);
  DerivativeWorkspace ws(mesh, obs, kDefaultBiot);
  const MapResult r = find_map(ws, prior, Vector::Zero(129), {.tol = 1e-6});
  CHECK(r.gradient_norm <= 1e-6);
  CHECK(r.iterations < 100);

  DerivativeWorkspace again(mesh, obs, kDefaultBiot);
  const MapResult r2 = find_map(again, prior, Vector::Zero(129), {.tol = 1e-6});
  CHECK(r2.u == r.u);
  CHECK(r2.iterations == r.iterations);
}

TEST_CASE("relative stopping rule") {
  const Mesh mesh(1);
  const PriorBasis prior = build_prior(mesh, 0.6, 0.1);
  const ObservationSet obs = config_a_observations();
  DerivativeWorkspace ws(mesh, obs, kDefaultBiot);
  ws.set_point(Vector::Zero(2));
  const double g0 = (ws.misfit_gradient() + prior_gradient(prior, Vector::Zero(2))).norm();
  const MapResult loose = find_map(ws, prior, Vector::Zero(2), {.tol = 1e-9, .rtol = 1e-3});
  CHECK(loose.gradient_norm <= 1e-3 * g0);
  const MapResult tight = find_map(ws, prior, Vector::Zero(2), {.tol = 1e-9, .rtol = 0.0});
  CHECK(tight.iterations >= loose.iterations);
}

TEST_CASE("MAP failures are loud") {
  const Mesh mesh(1);
  const PriorBasis prior = build_prior(mesh, 0.6, 0.1);
  const ObservationSet obs = config_a_observations();
  DerivativeWorkspace ws(mesh, obs, kDefaultBiot);
  CHECK_THROWS_AS(find_map(ws, prior, Vector::Constant(2, 5.0), {.max_iter = 0}), std::runtime_error);
  CHECK_THROWS_AS(find_map(ws, prior, Vector::Zero(2), {.tol = 0.0}), std::invalid_argument);
}
