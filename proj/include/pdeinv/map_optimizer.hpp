#pragma once

#include "pdeinv/adjoint.hpp"
#include "pdeinv/prior.hpp"

#include <vector>

namespace pdeinv {

struct MapOptions {
  double tol = 1e-8;      // on the Euclidean norm of the gradient
  double rtol = 1e-10;    // relative to the initial gradient norm; stops at max(tol, rtol |g0|)
  int max_iter = 200;
  int max_halvings = 40;
  double armijo = 1e-4;
  Execution exec = Execution::parallel;
};

struct MapResult {
  Vector u;
  int iterations = 0;
  double gradient_norm = 0.0;
  double objective = 0.0;             // misfit + prior quadratic form
  std::vector<double> objective_history;
};

/// Damped Gauss-Newton on misfit + prior: the step solves (H_gn + prior precision) d = -g,
/// followed by Armijo backtracking.
MapResult find_map(DerivativeWorkspace& ws, const PriorBasis& prior, const Vector& u_init,
                   const MapOptions& options = {});

}  // namespace pdeinv
