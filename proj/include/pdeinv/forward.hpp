#pragma once

// Steady heat conduction on [0, 1]:
//   -(e^u w')' = 0,   Robin  e^u w'(0) = Bi w(0),   unit flux  e^u w'(1) = 1.
// The discrete operator is A(u) = K_u + Bi e_0 e_0^T, loaded by e_{N-1}.

#include "pdeinv/fem.hpp"
#include "pdeinv/prior.hpp"

#include <memory>
#include <span>
#include <vector>

namespace pdeinv {

/// Default Biot number.
inline constexpr double kDefaultBiot = 0.1;

struct ObservationSet {
  std::vector<double> locations;
  Vector data;
  double noise_std = 1.0;

  std::size_t size() const { return locations.size(); }
  void validate() const;
};

/// P1 point evaluation at fixed locations. A location on a node reads that node exactly.
class PointObservation {
 public:
  PointObservation() = default;
  PointObservation(const Mesh& mesh, std::span<const double> locations);

  std::size_t size() const { return nodes_.size(); }
  Vector apply(const Vector& w) const;
  /// Adjoint: sum_j r_j phi(x_j) as a nodal load vector of length n_nodes.
  Vector apply_transpose(const Vector& r) const;

 private:
  Eigen::Index n_nodes_ = 0;
  std::vector<Eigen::Index> nodes_;  // left node of the containing element
  std::vector<double> right_weight_;
};

/// Factored forward/adjoint operator at one u. All solves with it share the factorization.
class ForwardOperator {
 public:
  ForwardOperator(const Mesh& mesh, const Vector& u, double bi);

  const ExpWeightedElements& elements() const { return elements_; }
  double biot() const { return bi_; }
  SymTridiagonal matrix() const;
  /// ||A||_inf times the largest Green's function entry 1/Bi + sum_e 1/c_e.
  double condition_estimate() const;
  Vector solve(const Vector& rhs, SolveCounter& counter) const;

 private:
  ExpWeightedElements elements_;
  double bi_;
  TridiagonalFactor factor_;
};

struct ForwardSolution {
  Vector w;
  std::shared_ptr<const ForwardOperator> op;
};

ForwardSolution solve_forward(const Mesh& mesh, const Vector& u, double bi, SolveCounter& counter);

Vector observe(const Mesh& mesh, const ForwardSolution& sol, std::span<const double> locations);

/// (1 / 2 sigma^2) sum_j (w(x_j) - d_j)^2; one forward solve.
double misfit(const Mesh& mesh, const Vector& u, const ObservationSet& obs, double bi, SolveCounter& counter);

/// -misfit - prior quadratic form, up to a u-independent constant.
double log_posterior(const Mesh& mesh, const Vector& u, const ObservationSet& obs, double bi,
                     const PriorBasis& prior, SolveCounter& counter);

}  // namespace pdeinv
