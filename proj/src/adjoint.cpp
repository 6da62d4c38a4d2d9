#include "pdeinv/adjoint.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace pdeinv {

namespace {

Vector unit(Eigen::Index n, Eigen::Index k) {
  Vector e = Vector::Zero(n);
  e[k] = 1.0;
  return e;
}

// floor: magnitude below which entries are roundoff (an uninformative observation
// gives a Fisher matrix that is zero up to rounding). Euclidean entries shrink like
// h^2 while the absolute rounding stays fixed, hence the loose bound: this only
// catches gross assembly errors.
void check_symmetric(const Matrix& a, double floor, const char* what) {
  const double scale = std::max(a.cwiseAbs().maxCoeff(), floor);
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff() / scale;
  if (asym > 1e-6) {
    std::ostringstream msg;
    msg << what << " is not symmetric: relative asymmetry " << asym;
    throw std::logic_error(msg.str());
  }
}

}  // namespace

DerivativeWorkspace::DerivativeWorkspace(const Mesh& mesh, const ObservationSet& obs, double bi)
    : mesh_(&mesh), obs_(&obs), bi_(bi) {
  obs.validate();
  if (!(bi > 0.0)) throw std::invalid_argument("Biot number must be positive");
  observation_ = PointObservation(mesh, obs.locations);
  inv_var_ = 1.0 / (obs.noise_std * obs.noise_std);
  u_ = Vector::Zero(mesh.n_nodes());
}

void DerivativeWorkspace::set_point(const Vector& u) {
  check_nodal(*mesh_, u, "u");
  if (forward_ && u.size() == u_.size() && u == u_) return;
  u_ = u;
  forward_.reset();
  residual_.reset();
  adjoint_.reset();
  basis_directions_.clear();
}

void DerivativeWorkspace::require_forward() {
  if (!forward_) forward_ = solve_forward(*mesh_, u_, bi_, counter_);
}

const ForwardSolution& DerivativeWorkspace::forward() {
  require_forward();
  return *forward_;
}

const Vector& DerivativeWorkspace::residual() {
  if (!residual_) residual_ = observation_.apply(forward().w) - obs_->data;
  return *residual_;
}

double DerivativeWorkspace::misfit() { return 0.5 * inv_var_ * residual().squaredNorm(); }

const Vector& DerivativeWorkspace::adjoint() {
  if (!adjoint_) {
    const Vector rhs = -inv_var_ * observation_.apply_transpose(residual());
    adjoint_ = forward_->op->solve(rhs, counter_);
  }
  return *adjoint_;
}

Vector DerivativeWorkspace::misfit_gradient() {
  const Vector& lambda = adjoint();
  return forward_->op->elements().nodal_form(forward_->w, lambda);
}

FisherDirection DerivativeWorkspace::fisher_direction(const Vector& v, SolveCounter& counter) const {
  const ForwardOperator& op = *forward_->op;
  FisherDirection d;
  d.direction = v;
  d.state = op.solve(-op.elements().directional(v).apply(forward_->w), counter);
  d.adjoint = op.solve(-inv_var_ * observation_.apply_transpose(observation_.apply(d.state)), counter);
  return d;
}

FisherDirection DerivativeWorkspace::fisher_direction(const Vector& v) {
  check_nodal(*mesh_, v, "direction");
  require_forward();
  return fisher_direction(v, counter_);
}

Vector DerivativeWorkspace::fisher_column(const FisherDirection& d) const {
  return forward_->op->elements().nodal_form(forward_->w, d.adjoint);
}

Vector DerivativeWorkspace::fisher_vector(const Vector& v) { return fisher_column(fisher_direction(v)); }

Matrix DerivativeWorkspace::fisher_apply(const Matrix& directions, Execution exec) {
  if (directions.rows() != mesh_->n_nodes()) throw std::invalid_argument("direction block has wrong row count");
  require_forward();
  const Eigen::Index m = directions.cols();
  Matrix out(directions.rows(), m);
  std::int64_t solves = 0;
  if (exec == Execution::parallel) {
#pragma omp parallel for reduction(+ : solves) schedule(static)
    for (Eigen::Index k = 0; k < m; ++k) {
      SolveCounter local;
      out.col(k) = fisher_column(fisher_direction(directions.col(k), local));
      solves += local.solves;
    }
  } else {
    for (Eigen::Index k = 0; k < m; ++k) {
      SolveCounter local;
      out.col(k) = fisher_column(fisher_direction(directions.col(k), local));
      solves += local.solves;
    }
  }
  counter_.add(solves);
  return out;
}

Vector DerivativeWorkspace::hessian_column(const Vector& v, SolveCounter& counter) const {
  const ForwardOperator& op = *forward_->op;
  const ExpWeightedElements& el = op.elements();
  const Vector& w = forward_->w;
  const Vector& lambda = *adjoint_;
  const SymTridiagonal dk = el.directional(v);
  const Vector w2 = op.solve(-dk.apply(w), counter);
  const Vector lambda2 =
      op.solve(-inv_var_ * observation_.apply_transpose(observation_.apply(w2)) - dk.apply(lambda), counter);
  return el.nodal_form(w, lambda2) + el.nodal_form(w2, lambda) + el.nodal_form(v, w, lambda);
}

Vector DerivativeWorkspace::hessian_vector(const Vector& v) {
  check_nodal(*mesh_, v, "direction");
  adjoint();
  return hessian_column(v, counter_);
}

Matrix DerivativeWorkspace::assemble_fisher(Execution exec) {
  require_forward();
  const Eigen::Index n = mesh_->n_nodes();
  std::vector<FisherDirection> dirs(static_cast<std::size_t>(n));
  Matrix h(n, n);
  std::int64_t solves = 0;
  if (exec == Execution::parallel) {
#pragma omp parallel for reduction(+ : solves) schedule(static)
    for (Eigen::Index k = 0; k < n; ++k) {
      SolveCounter local;
      dirs[k] = fisher_direction(unit(n, k), local);
      h.col(k) = fisher_column(dirs[k]);
      solves += local.solves;
    }
  } else {
    for (Eigen::Index k = 0; k < n; ++k) {
      SolveCounter local;
      dirs[k] = fisher_direction(unit(n, k), local);
      h.col(k) = fisher_column(dirs[k]);
      solves += local.solves;
    }
  }
  counter_.add(solves);
  check_symmetric(h, roundoff_scale(), "Fisher matrix");
  basis_directions_ = std::move(dirs);
  return 0.5 * (h + h.transpose());
}

Matrix DerivativeWorkspace::assemble_hessian(Execution exec) {
  adjoint();
  const Eigen::Index n = mesh_->n_nodes();
  Matrix h(n, n);
  std::int64_t solves = 0;
  if (exec == Execution::parallel) {
#pragma omp parallel for reduction(+ : solves) schedule(static)
    for (Eigen::Index k = 0; k < n; ++k) {
      SolveCounter local;
      h.col(k) = hessian_column(unit(n, k), local);
      solves += local.solves;
    }
  } else {
    for (Eigen::Index k = 0; k < n; ++k) {
      SolveCounter local;
      h.col(k) = hessian_column(unit(n, k), local);
      solves += local.solves;
    }
  }
  counter_.add(solves);
  check_symmetric(h, roundoff_scale(), "Hessian");
  return 0.5 * (h + h.transpose());
}

Vector DerivativeWorkspace::tensor_vector(const FisherDirection& d2, const Vector& v3, SolveCounter& counter) const {
  const ForwardOperator& op = *forward_->op;
  const ExpWeightedElements& el = op.elements();
  const Vector& w = forward_->w;
  const SymTridiagonal dk3 = el.directional(v3);
  const Vector w3 = op.solve(-dk3.apply(w), counter);
  const Vector rhs23 =
      -dk3.apply(d2.state) - el.directional2(v3, d2.direction).apply(w) - el.directional(d2.direction).apply(w3);
  const Vector w23 = op.solve(rhs23, counter);
  const Vector lambda23 =
      op.solve(-inv_var_ * observation_.apply_transpose(observation_.apply(w23)) - dk3.apply(d2.adjoint), counter);
  return el.nodal_form(v3, w, d2.adjoint) + el.nodal_form(w3, d2.adjoint) + el.nodal_form(w, lambda23);
}

double DerivativeWorkspace::third_tensor_action(const Vector& v1, const FisherDirection& d2, const Vector& v3) {
  check_nodal(*mesh_, v1, "direction 1");
  check_nodal(*mesh_, v3, "direction 3");
  require_forward();
  return v1.dot(tensor_vector(d2, v3, counter_));
}

double DerivativeWorkspace::third_tensor_action(const Vector& v1, const Vector& v2, const Vector& v3) {
  return third_tensor_action(v1, fisher_direction(v2), v3);
}

double DerivativeWorkspace::roundoff_scale() const {
  // Sensitivities come from differences of a nearly flat state when the operator is
  // badly conditioned, so their absolute error grows with the condition number.
  const double w = forward_->w.cwiseAbs().maxCoeff();
  return 1e-12 * inv_var_ * w * w * forward_->op->condition_estimate();
}

void DerivativeWorkspace::require_fisher_directions(Execution exec) {
  require_forward();
  if (static_cast<Eigen::Index>(basis_directions_.size()) != mesh_->n_nodes()) assemble_fisher(exec);
}

Matrix DerivativeWorkspace::metric_derivative(int k, Execution exec) {
  const Eigen::Index n = mesh_->n_nodes();
  if (n > metric_derivative_cap) {
    throw std::invalid_argument("metric derivative requested for N = " + std::to_string(n) +
                                " above the cap of " + std::to_string(metric_derivative_cap));
  }
  if (k < 0 || k >= n) throw std::out_of_range("metric derivative index out of range");
  require_fisher_directions(exec);
  const Vector ek = unit(n, k);
  // Entry (i, j) is its own tensor action T(e_i, e_j, e_k), 3 solves each.
  Matrix t(n, n);
  std::int64_t solves = 0;
  const Eigen::Index entries = n * n;
  if (exec == Execution::parallel) {
#pragma omp parallel for reduction(+ : solves) schedule(static)
    for (Eigen::Index e = 0; e < entries; ++e) {
      SolveCounter local;
      const Eigen::Index i = e % n, j = e / n;
      t(i, j) = tensor_vector(basis_directions_[j], ek, local)[i];
      solves += local.solves;
    }
  } else {
    for (Eigen::Index e = 0; e < entries; ++e) {
      SolveCounter local;
      const Eigen::Index i = e % n, j = e / n;
      t(i, j) = tensor_vector(basis_directions_[j], ek, local)[i];
      solves += local.solves;
    }
  }
  counter_.add(solves);
  check_symmetric(t, roundoff_scale(), "metric derivative");
  return 0.5 * (t + t.transpose());
}

std::vector<Matrix> DerivativeWorkspace::metric_derivatives(Execution exec) {
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(mesh_->n_nodes()));
  for (int k = 0; k < mesh_->n_nodes(); ++k) out.push_back(metric_derivative(k, exec));
  return out;
}

}  // namespace pdeinv
