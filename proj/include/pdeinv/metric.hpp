#pragma once

// Augmented Fisher metric  G = H + alpha M V Lambda^{-2} V^T M  (Euclidean form).
//
// Three representations: dense at the current point, dense frozen at the MAP
// (Gauss-Newton or full Hessian), and frozen low-rank where the prior-
// preconditioned Fisher matrix (1/alpha) Lambda V^T H V Lambda ~ Vr S Vr^T, so
//   G     = alpha M V Lambda^{-1} (I + Vr S Vr^T) Lambda^{-1} V^T M
//   G^-1  = (1/alpha) V Lambda (I - Vr D Vr^T) Lambda V^T,   D = S / (S + 1).

#include "pdeinv/adjoint.hpp"
#include "pdeinv/prior.hpp"

#include <Eigen/Cholesky>

#include <cstdint>
#include <random>
#include <string>

namespace pdeinv {

/// n iid N(0, 1) draws, in order.
Vector standard_normal(Eigen::Index n, std::mt19937_64& rng);

enum class MetricKind { exact, fixed_dense, fixed_low_rank };

class Metric {
 public:
  /// Dense SPD metric; throws IndefiniteMatrixError if Cholesky fails.
  static Metric dense(Matrix g, MetricKind kind = MetricKind::fixed_dense);
  /// Low-rank metric. `prior` must outlive the metric.
  static Metric low_rank(const PriorBasis& prior, Matrix vr, Vector s);

  MetricKind kind() const { return kind_; }
  Eigen::Index size() const { return size_; }
  Eigen::Index rank() const { return vr_.cols(); }

  Vector apply(const Vector& v) const;
  Vector solve(const Vector& v) const;
  /// Dense symmetric G^{-1}.
  Matrix inverse() const;
  double logdet() const { return logdet_; }
  /// p ~ N(0, G).
  Vector sample_momentum(std::mt19937_64& rng) const;

  Matrix to_dense() const;
  /// Dense matrix and its Cholesky factor; dense variants only.
  const Matrix& matrix() const;
  const Eigen::LLT<Matrix>& cholesky() const;

  const Matrix& low_rank_basis() const { return vr_; }
  const Vector& low_rank_values() const { return s_; }

 private:
  Metric() = default;

  MetricKind kind_ = MetricKind::fixed_dense;
  Eigen::Index size_ = 0;
  double logdet_ = 0.0;
  Matrix g_;
  Eigen::LLT<Matrix> llt_;
  const PriorBasis* prior_ = nullptr;
  Matrix vr_;
  Vector s_;
};

/// Dense G(u) = Fisher(u) + prior precision.
Metric build_exact(DerivativeWorkspace& ws, const PriorBasis& prior, const Vector& u,
                   Execution exec = Execution::parallel);

enum class FixedMetricKind { gauss_newton, full_hessian, low_rank };

struct FixedMetricSpec {
  FixedMetricKind kind = FixedMetricKind::gauss_newton;
  int rank = 20;
  int oversample = 0;
  std::uint64_t seed = 0;  // randomized test matrix
};

FixedMetricKind parse_fixed_metric_kind(const std::string& name);
std::string to_string(FixedMetricKind kind);

/// Metric frozen at u_map. The full-Hessian variant fails loudly if indefinite.
Metric build_fixed(DerivativeWorkspace& ws, const PriorBasis& prior, const Vector& u_map, const FixedMetricSpec& spec,
                   Execution exec = Execution::parallel);

struct LowRankFactor {
  Matrix basis;   // N x r, orthonormal columns
  Vector values;  // r, descending, nonnegative
  int restarts = 0;
};

/// One-pass randomized eigendecomposition of the prior-preconditioned Fisher matrix.
/// Costs 2 (r + oversample) solves per attempt; at most 3 restarts when the
/// sketch is ill-conditioned.
LowRankFactor rsvd_prior_preconditioned(DerivativeWorkspace& ws, const PriorBasis& prior, const Vector& u, int rank,
                                        int oversample, std::mt19937_64& rng, Execution exec = Execution::parallel);

/// Dense (1/alpha) Lambda V^T H V Lambda for a given Fisher matrix H.
Matrix prior_preconditioned(const PriorBasis& prior, const Matrix& fisher);

/// dG/du_k for every k; the prior term is constant so these are dH/du_k.
std::vector<Matrix> metric_derivatives(DerivativeWorkspace& ws, const Vector& u, Execution exec = Execution::parallel);

}  // namespace pdeinv
