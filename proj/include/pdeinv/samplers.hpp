#pragma once

// Riemannian-manifold MCMC kernels on the discretized posterior.
//
//   sRMMALA  position-dependent metric, no Christoffel drift
//   RMMALA   position-dependent metric with Christoffel drift
//   sRMHMC   metric frozen (usually at the MAP), explicit leapfrog
//   RMHMC    position-dependent metric, generalized leapfrog with Newton solves
//
// All log-densities are log posterior up to a constant; the metric is the
// Euclidean augmented Fisher matrix (see metric.hpp).

#include "pdeinv/adjoint.hpp"
#include "pdeinv/metric.hpp"
#include "pdeinv/prior.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace pdeinv {

enum class SamplerKind { srmmala, rmmala, srmhmc, rmhmc };

SamplerKind parse_sampler_kind(const std::string& name);
std::string to_string(SamplerKind kind);

/// What an evaluation must provide; each level includes the previous ones.
enum class EvalLevel { value = 0, gradient = 1, metric = 2, metric_derivatives = 3 };

struct PosteriorPoint {
  Vector u;
  double log_post = 0.0;
  Vector grad;                      // gradient of the log posterior
  std::optional<Metric> metric;     // exact augmented Fisher at u
  Matrix metric_inverse;            // filled with derivatives
  std::vector<Matrix> dmetric;      // dG/du_k
  EvalLevel level = EvalLevel::value;
};

/// Log posterior with its derivatives. Owns the derivative workspace and its solve counter.
class PosteriorModel {
 public:
  PosteriorModel(const Mesh& mesh, const ObservationSet& obs, double bi, const PriorBasis& prior,
                 Execution exec = Execution::parallel);

  /// Throws std::domain_error (overflow) or IndefiniteMatrixError on failure.
  PosteriorPoint evaluate(const Vector& u, EvalLevel level);
  /// Raises an existing point to a higher level, reusing what it has.
  void upgrade(PosteriorPoint& point, EvalLevel level);

  const PriorBasis& prior() const { return *prior_; }
  Eigen::Index dimension() const { return prior_->size(); }
  DerivativeWorkspace& workspace() { return ws_; }
  std::int64_t solves() const { return ws_.solves(); }

 private:
  const PriorBasis* prior_;
  DerivativeWorkspace ws_;
  Execution exec_;
};

/// Metropolis-Hastings test with one uniform draw per call. Non-finite proposals are rejected.
bool mh_accept(double log_post_current, double log_post_proposed, double log_q_forward, double log_q_reverse,
               std::mt19937_64& rng);

/// Mean of the Langevin proposal from `point` (which needs derivatives when `full`).
Vector mmala_mean(const PosteriorPoint& point, double eps, bool full);

/// Christoffel contraction c_k = sum_ij G^{-1}_ij Gamma^k_ij.
Vector christoffel_drift(const Matrix& metric_inverse, const std::vector<Matrix>& dmetric);

struct StepResult {
  PosteriorPoint state;
  bool accepted = false;
  double delta_h = 0.0;  // HMC energy error (0 for MALA)
};

StepResult mmala_step(PosteriorModel& model, const PosteriorPoint& current, double eps, bool full,
                      std::mt19937_64& rng);

struct Trajectory {
  PosteriorPoint end;
  Vector momentum;
  bool ok = true;
  std::string failure;
  std::vector<int> newton_iterations;  // one entry per implicit stage
};

/// L explicit leapfrog steps of H = -log pi(u) + p^T G^{-1} p / 2 with a fixed metric.
/// `start` needs a gradient. 2 solves per step.
Trajectory explicit_leapfrog(PosteriorModel& model, const Metric& metric, const PosteriorPoint& start, Vector p,
                             double eps, int steps);

struct NewtonOptions {
  double tol = 1e-12;  // infinity norm, relative to max(1, |state|_inf)
  int max_iter = 20;
};

/// L generalized leapfrog steps of the Riemannian Hamiltonian. `start` needs metric derivatives.
Trajectory generalized_leapfrog(PosteriorModel& model, const PosteriorPoint& start, Vector p, double eps, int steps,
                                const NewtonOptions& newton = {});

/// -log pi(u) + p^T G^{-1} p / 2 for a fixed metric.
double fixed_hamiltonian(const PosteriorPoint& point, const Metric& metric, const Vector& p);
/// -log pi(u) + log((2 pi)^N |G(u)|) / 2 + p^T G(u)^{-1} p / 2.
double riemannian_hamiltonian(const PosteriorPoint& point, const Vector& p);

StepResult srmhmc_step(PosteriorModel& model, const Metric& metric, const PosteriorPoint& current, double eps,
                       int steps, std::mt19937_64& rng);

StepResult rmhmc_step(PosteriorModel& model, const PosteriorPoint& current, double eps, int steps,
                      std::mt19937_64& rng, std::vector<int>* newton_iterations = nullptr,
                      const NewtonOptions& newton = {});

struct ChainConfig {
  SamplerKind kind = SamplerKind::srmhmc;
  double step_size = 0.02;
  int leapfrog_steps = 100;
  int n_samples = 5100;  // including burn-in
  int burn_in = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Chain {
  std::vector<Vector> samples;
  std::vector<double> log_posteriors;
  std::vector<std::uint8_t> accepted;
  std::vector<std::int64_t> solve_counts;  // cumulative sampling-phase solves after each sample
  std::vector<double> delta_h;
  std::vector<int> newton_iterations;      // RMHMC only, one per implicit stage
  double acceptance_rate = 0.0;
  int burn_in = 0;

  std::size_t size() const { return samples.size(); }
  /// Retained (post burn-in) values of one coordinate.
  std::vector<double> retained(Eigen::Index coordinate) const;
  double retained_acceptance_rate() const;
};

/// Runs a chain from `start`. `fixed_metric` is required for sRMHMC and ignored otherwise.
/// Solve counts include the evaluation at the starting point.
Chain run_chain(const ChainConfig& config, PosteriorModel& model, const Vector& start,
                const Metric* fixed_metric = nullptr);

/// Level a sampler needs at every state it visits.
EvalLevel required_level(SamplerKind kind);

}  // namespace pdeinv
