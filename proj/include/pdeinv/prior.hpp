#pragma once

// Gaussian prior N(u0, (alpha (I - Laplacian)^s)^{-1}) discretized by the matrix
// transfer technique: the fractional power acts on the generalized eigenpairs of
// (K, M), with K the Neumann stiffness and M the mass matrix.
//
// With V the M-orthonormal eigenvectors (V^T M V = I), sigma_i = mu_i + 1 and
// lambda_i = sigma_i^{-s/2}, the nodal prior has
//   covariance  (1/alpha) V diag(lambda)^2 V^T
//   precision   alpha M V diag(lambda)^{-2} V^T M
// Both are the Euclidean (nodal) forms; the M-weighted covariance operator is
// the covariance times M.

#include "pdeinv/fem.hpp"

namespace pdeinv {

struct PriorBasis {
  Matrix V;          // columns v_i, V^T M V = I
  Vector sigma;      // eigenvalues of M^{-1}K + I, ascending
  Vector lambda;     // KL weights sigma^{-s/2}, nonincreasing
  double alpha = 1.0;
  double s = 1.0;
  Vector u0;
  SymTridiagonal mass;
  Matrix mass_v;     // M V, cached

  Eigen::Index size() const { return sigma.size(); }
};

/// Requires s > 1/2 and alpha > 0. Eigenvectors are sign-normalized so their
/// first non-negligible component is positive.
PriorBasis build_prior(const Mesh& mesh, double s, double alpha, const Vector& u0);
PriorBasis build_prior(const Mesh& mesh, double s, double alpha);

/// u0 + alpha^{-1/2} sum_i a_i lambda_i v_i
Vector kl_sample(const PriorBasis& prior, const Vector& a);

/// (alpha/2) (u - u0)^T M V Lambda^{-2} V^T M (u - u0)
double prior_neg_log(const PriorBasis& prior, const Vector& u);
Vector prior_gradient(const PriorBasis& prior, const Vector& u);
/// prior_neg_log and prior_gradient from one whitening product.
double prior_neg_log(const PriorBasis& prior, const Vector& u, Vector& gradient);

Vector apply_precision(const PriorBasis& prior, const Vector& v);
Vector apply_covariance(const PriorBasis& prior, const Vector& v);

/// Dense alpha M V Lambda^{-2} V^T M.
Matrix precision_matrix(const PriorBasis& prior);

/// log det of the precision matrix, from the factors: N log alpha + log det M - 2 sum log lambda.
double precision_log_det(const PriorBasis& prior);

}  // namespace pdeinv
