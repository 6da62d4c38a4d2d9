#pragma once

// Adjoint calculus for the misfit J(u) = (1/2 sigma^2) |B w(u) - d|^2.
//
// Every derivative reuses the single factorization of A(u) held by the forward
// solution. Solve costs (each triangular solve counts once):
//   forward 1, first adjoint 1, Hessian- or Fisher-vector product 2,
//   third-derivative tensor action 3 given the Fisher intermediates of v2.

#include "pdeinv/forward.hpp"

#include <optional>
#include <vector>

namespace pdeinv {

enum class Execution { serial, parallel };

/// Second-order forward state dw/dv and the Gauss-Newton adjoint for one direction v.
struct FisherDirection {
  Vector direction;
  Vector state;    // A w2 = -(dA/dv) w
  Vector adjoint;  // A lambda2 = -(1/sigma^2) B^T B w2
};

class DerivativeWorkspace {
 public:
  DerivativeWorkspace(const Mesh& mesh, const ObservationSet& obs, double bi);

  /// Moves to u. Cached quantities survive only if u is bitwise unchanged.
  void set_point(const Vector& u);
  const Vector& point() const { return u_; }

  const Mesh& mesh() const { return *mesh_; }
  const ObservationSet& observations() const { return *obs_; }
  double biot() const { return bi_; }

  const ForwardSolution& forward();
  const Vector& adjoint();
  /// B w - d
  const Vector& residual();
  double misfit();

  /// Euclidean gradient of the misfit: g_i = int phi_i e^u w' lambda'.
  Vector misfit_gradient();
  Vector hessian_vector(const Vector& v);
  Vector fisher_vector(const Vector& v);
  FisherDirection fisher_direction(const Vector& v);
  /// Fisher matrix times each column of `directions`; 2 solves per column.
  Matrix fisher_apply(const Matrix& directions, Execution exec = Execution::parallel);

  /// Dense Gauss-Newton (Fisher) matrix, column k = fisher_vector(e_k). Caches the
  /// per-column intermediates for metric_derivative.
  Matrix assemble_fisher(Execution exec = Execution::parallel);
  /// Dense full misfit Hessian, column k = hessian_vector(e_k).
  Matrix assemble_hessian(Execution exec = Execution::parallel);

  /// <<<T(u), v1>, v2>, v3>: derivative of the Fisher form (v1, v2) along v3.
  double third_tensor_action(const Vector& v1, const FisherDirection& d2, const Vector& v3);
  double third_tensor_action(const Vector& v1, const Vector& v2, const Vector& v3);

  /// dH/du_k with entries T(e_i, e_j, e_k), symmetrized over (i, j). Each entry is
  /// a separate tensor action: 3N^2 solves once the Fisher intermediates at u are
  /// cached (2N more otherwise).
  Matrix metric_derivative(int k, Execution exec = Execution::parallel);
  std::vector<Matrix> metric_derivatives(Execution exec = Execution::parallel);

  SolveCounter& counter() { return counter_; }
  std::int64_t solves() const { return counter_.solves; }

  /// Upper bound on N for metric_derivative (O(N^2) solves per call).
  int metric_derivative_cap = 64;

 private:
  void require_forward();
  FisherDirection fisher_direction(const Vector& v, SolveCounter& counter) const;
  Vector fisher_column(const FisherDirection& d) const;
  Vector hessian_column(const Vector& v, SolveCounter& counter) const;
  Vector tensor_vector(const FisherDirection& d2, const Vector& v3, SolveCounter& counter) const;
  void require_fisher_directions(Execution exec);
  double roundoff_scale() const;

  const Mesh* mesh_;
  const ObservationSet* obs_;
  double bi_;
  PointObservation observation_;
  double inv_var_;

  Vector u_;
  std::optional<ForwardSolution> forward_;
  std::optional<Vector> residual_;
  std::optional<Vector> adjoint_;
  std::vector<FisherDirection> basis_directions_;
  SolveCounter counter_;
};

}  // namespace pdeinv
