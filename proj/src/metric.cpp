#include "pdeinv/metric.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace pdeinv {

Vector standard_normal(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
  return z;
}

Metric Metric::dense(Matrix g, MetricKind kind) {
  if (g.rows() != g.cols()) throw std::invalid_argument("metric must be square");
  Metric m;
  m.kind_ = kind;
  m.size_ = g.rows();
  m.g_ = std::move(g);
  m.llt_.compute(m.g_);
  if (m.llt_.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m.g_, Eigen::EigenvaluesOnly);
    std::ostringstream msg;
    msg << "metric is not positive definite (smallest eigenvalue " << eig.eigenvalues()[0] << ")";
    throw IndefiniteMatrixError(msg.str());
  }
  m.logdet_ = 2.0 * m.llt_.matrixLLT().diagonal().array().log().sum();
  return m;
}

Metric Metric::low_rank(const PriorBasis& prior, Matrix vr, Vector s) {
  if (vr.rows() != prior.size() || vr.cols() != s.size()) throw std::invalid_argument("low-rank factor shape mismatch");
  if ((s.array() < 0.0).any()) throw std::invalid_argument("low-rank spectrum must be nonnegative");
  const double orth = (vr.transpose() * vr - Matrix::Identity(vr.cols(), vr.cols())).cwiseAbs().maxCoeff();
  if (orth > 1e-8) throw std::invalid_argument("low-rank basis is not orthonormal");
  Metric m;
  m.kind_ = MetricKind::fixed_low_rank;
  m.size_ = prior.size();
  m.prior_ = &prior;
  m.vr_ = std::move(vr);
  m.s_ = std::move(s);
  m.logdet_ = precision_log_det(prior) + m.s_.array().log1p().sum();
  return m;
}

Vector Metric::apply(const Vector& v) const {
  if (kind_ != MetricKind::fixed_low_rank) return g_ * v;
  const PriorBasis& p = *prior_;
  Vector x = (p.mass_v.transpose() * v).cwiseQuotient(p.lambda);
  x += vr_ * s_.cwiseProduct(vr_.transpose() * x);
  return p.alpha * (p.mass_v * x.cwiseQuotient(p.lambda));
}

Vector Metric::solve(const Vector& v) const {
  if (kind_ != MetricKind::fixed_low_rank) return llt_.solve(v);
  const PriorBasis& p = *prior_;
  const Vector d = s_.array() / (s_.array() + 1.0);
  Vector y = (p.V.transpose() * v).cwiseProduct(p.lambda);
  y -= vr_ * d.cwiseProduct(vr_.transpose() * y);
  return (p.V * y.cwiseProduct(p.lambda)) / p.alpha;
}

Matrix Metric::inverse() const {
  if (kind_ != MetricKind::fixed_low_rank) {
    Matrix inv = llt_.solve(Matrix::Identity(size_, size_));
    return 0.5 * (inv + inv.transpose());
  }
  const PriorBasis& p = *prior_;
  const Vector d = s_.array() / (s_.array() + 1.0);
  const Matrix scaled = p.V * p.lambda.asDiagonal();
  const Matrix inner = Matrix::Identity(size_, size_) - vr_ * d.asDiagonal() * vr_.transpose();
  return scaled * inner * scaled.transpose() / p.alpha;
}

Vector Metric::sample_momentum(std::mt19937_64& rng) const {
  if (kind_ != MetricKind::fixed_low_rank) return llt_.matrixL() * standard_normal(size_, rng);
  const PriorBasis& p = *prior_;
  Vector b = standard_normal(size_, rng);
  const Vector c = standard_normal(vr_.cols(), rng);
  b += vr_ * s_.cwiseSqrt().cwiseProduct(c);
  return std::sqrt(p.alpha) * (p.mass_v * b.cwiseQuotient(p.lambda));
}

Matrix Metric::to_dense() const {
  if (kind_ != MetricKind::fixed_low_rank) return g_;
  const PriorBasis& p = *prior_;
  const Matrix scaled = p.mass_v * p.lambda.cwiseInverse().asDiagonal();
  Matrix inner = Matrix::Identity(size_, size_) + vr_ * s_.asDiagonal() * vr_.transpose();
  Matrix g = p.alpha * scaled * inner * scaled.transpose();
  return 0.5 * (g + g.transpose());
}

const Matrix& Metric::matrix() const {
  if (kind_ == MetricKind::fixed_low_rank) throw std::logic_error("low-rank metric has no stored dense matrix");
  return g_;
}

const Eigen::LLT<Matrix>& Metric::cholesky() const {
  if (kind_ == MetricKind::fixed_low_rank) throw std::logic_error("low-rank metric has no Cholesky factor");
  return llt_;
}

Metric build_exact(DerivativeWorkspace& ws, const PriorBasis& prior, const Vector& u, Execution exec) {
  ws.set_point(u);
  return Metric::dense(ws.assemble_fisher(exec) + precision_matrix(prior), MetricKind::exact);
}

FixedMetricKind parse_fixed_metric_kind(const std::string& name) {
  if (name == "fixed_gn" || name == "gauss_newton") return FixedMetricKind::gauss_newton;
  if (name == "fixed_full" || name == "full_hessian") return FixedMetricKind::full_hessian;
  if (name == "fixed_lowrank" || name == "low_rank") return FixedMetricKind::low_rank;
  throw std::invalid_argument("unknown fixed metric kind '" + name + "'");
}

std::string to_string(FixedMetricKind kind) {
  switch (kind) {
    case FixedMetricKind::gauss_newton: return "fixed_gn";
    case FixedMetricKind::full_hessian: return "fixed_full";
    case FixedMetricKind::low_rank: return "fixed_lowrank";
  }
  return "?";
}

Metric build_fixed(DerivativeWorkspace& ws, const PriorBasis& prior, const Vector& u_map, const FixedMetricSpec& spec,
                   Execution exec) {
  switch (spec.kind) {
    case FixedMetricKind::gauss_newton: {
      ws.set_point(u_map);
      return Metric::dense(ws.assemble_fisher(exec) + precision_matrix(prior), MetricKind::fixed_dense);
    }
    case FixedMetricKind::full_hessian: {
      ws.set_point(u_map);
      Matrix g = ws.assemble_hessian(exec) + precision_matrix(prior);
      try {
        return Metric::dense(std::move(g), MetricKind::fixed_dense);
      } catch (const IndefiniteMatrixError& e) {
        throw IndefiniteMatrixError(std::string("full-Hessian metric at the MAP point: ") + e.what());
      }
    }
    case FixedMetricKind::low_rank: {
      std::mt19937_64 rng(spec.seed);
      LowRankFactor f = rsvd_prior_preconditioned(ws, prior, u_map, spec.rank, spec.oversample, rng, exec);
      return Metric::low_rank(prior, std::move(f.basis), std::move(f.values));
    }
  }
  throw std::logic_error("unhandled metric kind");
}

Matrix prior_preconditioned(const PriorBasis& prior, const Matrix& fisher) {
  const Matrix vl = prior.V * prior.lambda.asDiagonal();
  Matrix h = vl.transpose() * fisher * vl / prior.alpha;
  return 0.5 * (h + h.transpose());
}

LowRankFactor rsvd_prior_preconditioned(DerivativeWorkspace& ws, const PriorBasis& prior, const Vector& u, int rank,
                                        int oversample, std::mt19937_64& rng, Execution exec) {
  const Eigen::Index n = prior.size();
  const Eigen::Index width = rank + oversample;
  if (rank < 1 || oversample < 0 || width > n) {
    throw std::invalid_argument("randomized decomposition needs 1 <= r and r + oversample <= N");
  }
  ws.set_point(u);
  const Matrix vl = prior.V * prior.lambda.asDiagonal();
  std::normal_distribution<double> normal;

  constexpr int kMaxRestarts = 3;
  for (int attempt = 0; attempt <= kMaxRestarts; ++attempt) {
    Matrix omega(n, width);
    for (Eigen::Index j = 0; j < width; ++j)
      for (Eigen::Index i = 0; i < n; ++i) omega(i, j) = normal(rng);

    const Matrix y = vl.transpose() * ws.fisher_apply(vl * omega, exec) / prior.alpha;
    Eigen::HouseholderQR<Matrix> qr(y);
    const Matrix q = qr.householderQ() * Matrix::Identity(n, width);

    const Matrix qt_omega = q.transpose() * omega;
    Eigen::JacobiSVD<Matrix> svd(qt_omega);
    const Vector sv = svd.singularValues();
    if (!(sv[sv.size() - 1] > 1e-10 * sv[0])) continue;

    // B (Q^T Omega) = Q^T Y  =>  (Q^T Omega)^T B^T = (Q^T Y)^T
    const Matrix bt = qt_omega.transpose().fullPivLu().solve((q.transpose() * y).transpose());
    const Matrix b = 0.5 * (bt + bt.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(b);
    LowRankFactor out;
    out.restarts = attempt;
    out.basis.resize(n, rank);
    out.values.resize(rank);
    for (int i = 0; i < rank; ++i) {
      const Eigen::Index src = width - 1 - i;  // descending
      out.values[i] = std::max(eig.eigenvalues()[src], 0.0);
      out.basis.col(i) = q * eig.eigenvectors().col(src);
    }
    return out;
  }
  throw std::runtime_error("randomized decomposition: sketch stayed ill-conditioned after restarts");
}

std::vector<Matrix> metric_derivatives(DerivativeWorkspace& ws, const Vector& u, Execution exec) {
  ws.set_point(u);
  return ws.metric_derivatives(exec);
}

}  // namespace pdeinv
