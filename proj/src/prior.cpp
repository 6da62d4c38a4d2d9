#include "pdeinv/prior.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>

namespace pdeinv {

PriorBasis build_prior(const Mesh& mesh, double s, double alpha, const Vector& u0) {
  if (!(s > 0.5)) throw std::invalid_argument("prior smoothness s must exceed 1/2 in 1D");
  if (!(alpha > 0.0)) throw std::invalid_argument("prior scale alpha must be positive");
  check_nodal(mesh, u0, "prior mean");

  PriorBasis prior;
  prior.alpha = alpha;
  prior.s = s;
  prior.u0 = u0;
  prior.mass = assemble_mass(mesh);

  const Matrix k = assemble_weighted_stiffness(mesh, Vector::Zero(mesh.n_nodes())).to_dense();
  const Matrix m = prior.mass.to_dense();
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> eig(k, m, Eigen::ComputeEigenvectors | Eigen::Ax_lBx);
  if (eig.info() != Eigen::Success) throw std::runtime_error("generalized eigensolver failed");

  const Eigen::Index n = mesh.n_nodes();
  prior.V = eig.eigenvectors();
  // K is PSD; tiny negative eigenvalues are roundoff around the constant mode.
  prior.sigma = eig.eigenvalues().cwiseMax(0.0).array() + 1.0;
  prior.lambda = prior.sigma.array().pow(-0.5 * s);

  for (Eigen::Index j = 0; j < n; ++j) {
    auto col = prior.V.col(j);
    const double tiny = 1e-10 * col.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(col[i]) > tiny) {
        if (col[i] < 0.0) col = -col;
        break;
      }
    }
    // Re-normalize in the M inner product; the solver's normalization is already close.
    col /= std::sqrt(col.dot(prior.mass.apply(col)));
  }

  prior.mass_v.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j) prior.mass_v.col(j) = prior.mass.apply(prior.V.col(j));
  return prior;
}

PriorBasis build_prior(const Mesh& mesh, double s, double alpha) {
  return build_prior(mesh, s, alpha, Vector::Zero(mesh.n_nodes()));
}

Vector kl_sample(const PriorBasis& prior, const Vector& a) {
  if (a.size() != prior.size()) throw std::invalid_argument("KL coefficient vector has wrong length");
  return prior.u0 + prior.V * a.cwiseProduct(prior.lambda) / std::sqrt(prior.alpha);
}

namespace {

// Lambda^{-1} V^T M x
Vector whitened(const PriorBasis& prior, const Vector& x) {
  return (prior.mass_v.transpose() * x).cwiseQuotient(prior.lambda);
}

}  // namespace

double prior_neg_log(const PriorBasis& prior, const Vector& u) {
  return 0.5 * prior.alpha * whitened(prior, u - prior.u0).squaredNorm();
}

double prior_neg_log(const PriorBasis& prior, const Vector& u, Vector& gradient) {
  const Vector w = whitened(prior, u - prior.u0);
  gradient = prior.alpha * (prior.mass_v * w.cwiseQuotient(prior.lambda));
  return 0.5 * prior.alpha * w.squaredNorm();
}

Vector prior_gradient(const PriorBasis& prior, const Vector& u) { return apply_precision(prior, u - prior.u0); }

Vector apply_precision(const PriorBasis& prior, const Vector& v) {
  const Vector coeff = whitened(prior, v).cwiseQuotient(prior.lambda);
  return prior.alpha * (prior.mass_v * coeff);
}

Vector apply_covariance(const PriorBasis& prior, const Vector& v) {
  const Vector coeff = (prior.V.transpose() * v).cwiseProduct(prior.lambda.cwiseAbs2());
  return (prior.V * coeff) / prior.alpha;
}

Matrix precision_matrix(const PriorBasis& prior) {
  const Matrix scaled = prior.mass_v * prior.lambda.cwiseInverse().asDiagonal();
  Matrix p = prior.alpha * (scaled * scaled.transpose());
  return 0.5 * (p + p.transpose());
}

double precision_log_det(const PriorBasis& prior) {
  const double n = static_cast<double>(prior.size());
  return n * std::log(prior.alpha) + TridiagonalFactor(prior.mass).log_det() -
         2.0 * prior.lambda.array().log().sum();
}

}  // namespace pdeinv
