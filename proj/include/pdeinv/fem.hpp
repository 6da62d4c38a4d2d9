#pragma once

// P1 finite elements on a uniform partition of [0, 1].
//
// Everything here works on nodal vectors. The log-conductivity u is linear on
// each element, so every integral of e^u against products of hat functions has
// a closed form; ExpWeightedElements caches those per element for one u.

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdeinv {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when a factorization meets a non-positive pivot.
class IndefiniteMatrixError : public std::runtime_error {
 public:
  explicit IndefiniteMatrixError(const std::string& what) : std::runtime_error(what) {}
};

/// Uniform 1D mesh of [0, 1].
class Mesh {
 public:
  explicit Mesh(int n_elements);

  int n_elements() const { return n_elements_; }
  int n_nodes() const { return n_elements_ + 1; }
  double h() const { return h_; }
  double node(int i) const { return nodes_[i]; }
  const Vector& nodes() const { return nodes_; }

  /// Element containing x, with x at an interior node assigned to the element on its right.
  int element_of(double x) const;

 private:
  int n_elements_;
  double h_;
  Vector nodes_;
};

/// Symmetric tridiagonal matrix; the single off-diagonal makes symmetry exact.
struct SymTridiagonal {
  Vector diagonal;
  Vector off_diagonal;

  SymTridiagonal() = default;
  explicit SymTridiagonal(Eigen::Index n) : diagonal(Vector::Zero(n)), off_diagonal(Vector::Zero(n > 0 ? n - 1 : 0)) {}

  Eigen::Index size() const { return diagonal.size(); }
  Vector apply(const Vector& x) const;
  Matrix to_dense() const;
  SymTridiagonal& operator*=(double s);
  SymTridiagonal& operator+=(const SymTridiagonal& other);
};

/// PDE-solve accumulator. One per chain or workspace; never shared across threads.
struct SolveCounter {
  std::int64_t solves = 0;
  void add(std::int64_t n = 1) { solves += n; }
};

/// LDL^T factorization of an SPD tridiagonal matrix.
class TridiagonalFactor {
 public:
  TridiagonalFactor() = default;
  explicit TridiagonalFactor(const SymTridiagonal& a);

  /// Factor of diag(ground) + sum_e c_e (e_e - e_{e+1})(e_e - e_{e+1})^T with ground, c >= 0.
  /// Pivots are formed from sums and products of nonnegative terms, so they keep
  /// full relative accuracy however large c is compared with the grounding.
  static TridiagonalFactor grounded(const Vector& ground, const Vector& conductance);

  Eigen::Index size() const { return pivots_.size(); }
  Vector solve(const Vector& b) const;
  double log_det() const;

 private:
  Vector pivots_;       // D
  Vector multipliers_;  // subdiagonal of unit lower L
};

/// Direct solve of an SPD tridiagonal system; counts one solve when a counter is given.
Vector solve_spd(const SymTridiagonal& a, const Vector& b, SolveCounter* counter = nullptr);

SymTridiagonal assemble_mass(const Mesh& mesh);

/// Galerkin matrix of  int e^u w' v' dx  (no boundary terms).
SymTridiagonal assemble_weighted_stiffness(const Mesh& mesh, const Vector& u);

/// Integrals of e^{u(x)} times zero, one, or two hat functions, per element, for a fixed u.
///
/// All bilinear forms of the adjoint calculus reduce to
///   sum_e  (x_b - x_a)(y_b - y_a) / h^2  *  int_e c(x) e^u dx
/// with c a product of at most two piecewise-linear functions.
class ExpWeightedElements {
 public:
  ExpWeightedElements(const Mesh& mesh, const Vector& u);

  const Mesh& mesh() const { return *mesh_; }
  const Vector& u() const { return u_; }

  /// K_u: matrix of int e^u phi_i' phi_j'.
  SymTridiagonal stiffness() const;
  /// Directional derivative of K_u along v: matrix of int v e^u phi_i' phi_j'.
  SymTridiagonal directional(const Vector& v) const;
  /// Second directional derivative of K_u along v and z.
  SymTridiagonal directional2(const Vector& v, const Vector& z) const;

  /// Node-wise form  g_i = int phi_i e^u x' y'.
  Vector nodal_form(const Vector& x, const Vector& y) const;
  /// Node-wise form  g_i = int phi_i v e^u x' y'.
  Vector nodal_form(const Vector& v, const Vector& x, const Vector& y) const;

  /// Moments of e^{-kappa t} on [0, 1]: {int t^n e^{-kappa t} dt, n = 0, 1, 2}, kappa >= 0.
  static Eigen::Vector3d decay_moments(double kappa);

 private:
  struct Element {
    double base;  // h * exp(max(u_a, u_b))
    double m0, ma, mb, maa, mab, mbb;
  };

  const Mesh* mesh_;
  Vector u_;
  std::vector<Element> elements_;
};

/// Largest admissible entry of u before e^u is treated as overflow.
inline constexpr double kMaxLogConductivity = 700.0;

void check_nodal(const Mesh& mesh, const Vector& v, const char* name);

}  // namespace pdeinv
