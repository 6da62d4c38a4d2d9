#include "pdeinv/forward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pdeinv {

void ObservationSet::validate() const {
  if (locations.empty()) throw std::invalid_argument("at least one observation is required");
  if (static_cast<Eigen::Index>(locations.size()) != data.size()) {
    throw std::invalid_argument("observation locations and data differ in length");
  }
  for (double x : locations) {
    if (!(x >= 0.0 && x <= 1.0)) throw std::out_of_range("observation location outside [0, 1]");
  }
  if (!(noise_std > 0.0)) throw std::invalid_argument("noise standard deviation must be positive");
  if (!data.allFinite()) throw std::domain_error("observation data must be finite");
}

PointObservation::PointObservation(const Mesh& mesh, std::span<const double> locations)
    : n_nodes_(mesh.n_nodes()) {
  nodes_.reserve(locations.size());
  right_weight_.reserve(locations.size());
  for (double x : locations) {
    const int e = mesh.element_of(x);
    double t = (x - mesh.node(e)) / mesh.h();
    // Snap to nodes so nodal observations are exact reads.
    if (std::abs(t) < 1e-12) t = 0.0;
    if (std::abs(t - 1.0) < 1e-12) t = 1.0;
    nodes_.push_back(e);
    right_weight_.push_back(t);
  }
}

Vector PointObservation::apply(const Vector& w) const {
  Vector out(static_cast<Eigen::Index>(nodes_.size()));
  for (std::size_t j = 0; j < nodes_.size(); ++j) {
    const Eigen::Index i = nodes_[j];
    const double t = right_weight_[j];
    if (t == 0.0) {
      out[j] = w[i];
    } else if (t == 1.0) {
      out[j] = w[i + 1];
    } else {
      out[j] = (1.0 - t) * w[i] + t * w[i + 1];
    }
  }
  return out;
}

Vector PointObservation::apply_transpose(const Vector& r) const {
  Vector out = Vector::Zero(n_nodes_);
  for (std::size_t j = 0; j < nodes_.size(); ++j) {
    const Eigen::Index i = nodes_[j];
    const double t = right_weight_[j];
    if (t != 1.0) out[i] += (1.0 - t) * r[j];
    if (t != 0.0) out[i + 1] += t * r[j];
  }
  return out;
}

namespace {

SymTridiagonal robin_operator(const ExpWeightedElements& elements, double bi) {
  SymTridiagonal a = elements.stiffness();
  a.diagonal[0] += bi;
  return a;
}

}  // namespace

ForwardOperator::ForwardOperator(const Mesh& mesh, const Vector& u, double bi)
    : elements_(mesh, u), bi_(bi) {
  if (!(bi > 0.0)) throw std::invalid_argument("Biot number must be positive");
  const SymTridiagonal k = elements_.stiffness();
  Vector ground = Vector::Zero(k.size());
  ground[0] = bi;
  factor_ = TridiagonalFactor::grounded(ground, -k.off_diagonal);
}

SymTridiagonal ForwardOperator::matrix() const { return robin_operator(elements_, bi_); }

double ForwardOperator::condition_estimate() const {
  const SymTridiagonal a = matrix();
  const Eigen::Index n = a.size();
  double norm = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double row = std::abs(a.diagonal[i]);
    if (i > 0) row += std::abs(a.off_diagonal[i - 1]);
    if (i + 1 < n) row += std::abs(a.off_diagonal[i]);
    norm = std::max(norm, row);
  }
  const double green = 1.0 / bi_ + a.off_diagonal.cwiseAbs().cwiseInverse().sum();
  return norm * green;
}

Vector ForwardOperator::solve(const Vector& rhs, SolveCounter& counter) const {
  counter.add();
  return factor_.solve(rhs);
}

ForwardSolution solve_forward(const Mesh& mesh, const Vector& u, double bi, SolveCounter& counter) {
  auto op = std::make_shared<const ForwardOperator>(mesh, u, bi);
  Vector load = Vector::Zero(mesh.n_nodes());
  load[mesh.n_nodes() - 1] = 1.0;
  Vector w = op->solve(load, counter);
  return {std::move(w), std::move(op)};
}

Vector observe(const Mesh& mesh, const ForwardSolution& sol, std::span<const double> locations) {
  return PointObservation(mesh, locations).apply(sol.w);
}

double misfit(const Mesh& mesh, const Vector& u, const ObservationSet& obs, double bi, SolveCounter& counter) {
  obs.validate();
  const ForwardSolution sol = solve_forward(mesh, u, bi, counter);
  const Vector r = observe(mesh, sol, obs.locations) - obs.data;
  return 0.5 * r.squaredNorm() / (obs.noise_std * obs.noise_std);
}

double log_posterior(const Mesh& mesh, const Vector& u, const ObservationSet& obs, double bi,
                     const PriorBasis& prior, SolveCounter& counter) {
  return -misfit(mesh, u, obs, bi, counter) - prior_neg_log(prior, u);
}

}  // namespace pdeinv
