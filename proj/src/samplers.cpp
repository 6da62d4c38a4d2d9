#include "pdeinv/samplers.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace pdeinv {

namespace {

constexpr double kEnergyGuard = 1000.0;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct EvaluationFailure {};

// Ginv dG_k Ginv and tr(Ginv dG_k) / 2 at one point.
struct RiemannTerms {
  std::vector<Matrix> sandwich;
  Vector half_trace;
};

RiemannTerms riemann_terms(const PosteriorPoint& point) {
  const auto n = point.u.size();
  RiemannTerms t;
  t.sandwich.reserve(static_cast<std::size_t>(n));
  t.half_trace.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Matrix& dg = point.dmetric[static_cast<std::size_t>(k)];
    t.sandwich.push_back(point.metric_inverse * dg * point.metric_inverse);
    t.half_trace[k] = 0.5 * point.metric_inverse.cwiseProduct(dg).sum();
  }
  return t;
}

// dH/du at (point, p) for the Riemannian Hamiltonian.
Vector riemann_force(const PosteriorPoint& point, const RiemannTerms& t, const Vector& p) {
  Vector f = -point.grad + t.half_trace;
  for (Eigen::Index k = 0; k < f.size(); ++k) f[k] -= 0.5 * p.dot(t.sandwich[static_cast<std::size_t>(k)] * p);
  return f;
}

double newton_tolerance(const NewtonOptions& opt, const Vector& x) {
  return opt.tol * std::max(1.0, x.lpNorm<Eigen::Infinity>());
}

bool finite(const Vector& v) { return v.allFinite(); }

}  // namespace

SamplerKind parse_sampler_kind(const std::string& name) {
  if (name == "srmmala") return SamplerKind::srmmala;
  if (name == "rmmala") return SamplerKind::rmmala;
  if (name == "srmhmc") return SamplerKind::srmhmc;
  if (name == "rmhmc") return SamplerKind::rmhmc;
  throw std::invalid_argument("unknown sampler '" + name + "'");
}

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::srmmala: return "srmmala";
    case SamplerKind::rmmala: return "rmmala";
    case SamplerKind::srmhmc: return "srmhmc";
    case SamplerKind::rmhmc: return "rmhmc";
  }
  return "unknown";
}

EvalLevel required_level(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::srmmala: return EvalLevel::metric;
    case SamplerKind::srmhmc: return EvalLevel::gradient;
    case SamplerKind::rmmala:
    case SamplerKind::rmhmc: return EvalLevel::metric_derivatives;
  }
  return EvalLevel::metric_derivatives;
}

PosteriorModel::PosteriorModel(const Mesh& mesh, const ObservationSet& obs, double bi, const PriorBasis& prior,
                               Execution exec)
    : prior_(&prior), ws_(mesh, obs, bi), exec_(exec) {
  if (prior.size() != mesh.n_nodes()) throw std::invalid_argument("prior and mesh sizes differ");
}

PosteriorPoint PosteriorModel::evaluate(const Vector& u, EvalLevel level) {
  PosteriorPoint point;
  point.u = u;
  ws_.set_point(u);
  if (level >= EvalLevel::gradient) {
    Vector prior_grad;
    point.log_post = -ws_.misfit() - prior_neg_log(*prior_, u, prior_grad);
    point.grad = -ws_.misfit_gradient() - prior_grad;
    point.level = EvalLevel::gradient;
  } else {
    point.log_post = -ws_.misfit() - prior_neg_log(*prior_, u);
    point.level = EvalLevel::value;
  }
  upgrade(point, level);
  return point;
}

void PosteriorModel::upgrade(PosteriorPoint& point, EvalLevel level) {
  if (point.level >= level) return;
  ws_.set_point(point.u);
  if (point.level < EvalLevel::gradient) {
    point.grad = -ws_.misfit_gradient() - prior_gradient(*prior_, point.u);
    point.level = EvalLevel::gradient;
  }
  if (level >= EvalLevel::metric && point.level < EvalLevel::metric) {
    point.metric = build_exact(ws_, *prior_, point.u, exec_);
    point.level = EvalLevel::metric;
  }
  if (level >= EvalLevel::metric_derivatives && point.level < EvalLevel::metric_derivatives) {
    point.metric_inverse = point.metric->inverse();
    point.dmetric = metric_derivatives(ws_, point.u, exec_);
    point.level = EvalLevel::metric_derivatives;
  }
}

bool mh_accept(double log_post_current, double log_post_proposed, double log_q_forward, double log_q_reverse,
               std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double draw = uniform(rng);
  const double delta = (log_post_proposed - log_post_current) + (log_q_reverse - log_q_forward);
  if (!std::isfinite(log_post_proposed) || std::isnan(delta)) return false;
  if (delta >= 0.0) return true;
  return std::log(draw) < delta;
}

Vector christoffel_drift(const Matrix& metric_inverse, const std::vector<Matrix>& dmetric) {
  const auto n = metric_inverse.rows();
  Vector a(n), b(n);
  for (Eigen::Index m = 0; m < n; ++m) {
    // a_m = sum_ij Ginv_ij dG_mj/du_i,  b_m = tr(Ginv dG/du_m)
    double am = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) am += dmetric[static_cast<std::size_t>(i)].row(m).dot(metric_inverse.col(i));
    a[m] = am;
    b[m] = metric_inverse.cwiseProduct(dmetric[static_cast<std::size_t>(m)]).sum();
  }
  return metric_inverse * (a - 0.5 * b);
}

Vector mmala_mean(const PosteriorPoint& point, double eps, bool full) {
  if (point.level < EvalLevel::metric) throw std::logic_error("mMALA mean needs the metric");
  Vector mean = point.u + (0.5 * eps * eps) * point.metric->solve(point.grad);
  if (full) {
    if (point.level < EvalLevel::metric_derivatives) throw std::logic_error("mMALA drift needs metric derivatives");
    mean -= (eps * eps) * christoffel_drift(point.metric_inverse, point.dmetric);
  }
  return mean;
}

namespace {

double mmala_log_density(const PosteriorPoint& from, const Vector& to, double eps, bool full) {
  const Vector d = to - mmala_mean(from, eps, full);
  return -0.5 / (eps * eps) * d.dot(from.metric->apply(d)) + 0.5 * from.metric->logdet();
}

}  // namespace

StepResult mmala_step(PosteriorModel& model, const PosteriorPoint& current, double eps, bool full,
                      std::mt19937_64& rng) {
  const Vector mean = mmala_mean(current, eps, full);
  const Vector z = standard_normal(current.u.size(), rng);
  const Vector proposal = mean + eps * current.metric->cholesky().matrixU().solve(z);

  StepResult result;
  result.state = current;
  PosteriorPoint candidate;
  bool ok = finite(proposal);
  if (ok) {
    try {
      candidate = model.evaluate(proposal, full ? EvalLevel::metric_derivatives : EvalLevel::metric);
    } catch (const std::domain_error&) {
      ok = false;
    } catch (const IndefiniteMatrixError&) {
      ok = false;
    }
  }
  if (!ok) {
    mh_accept(current.log_post, kNegInf, 0.0, 0.0, rng);
    return result;
  }
  const double q_forward = mmala_log_density(current, proposal, eps, full);
  const double q_reverse = mmala_log_density(candidate, current.u, eps, full);
  if (mh_accept(current.log_post, candidate.log_post, q_forward, q_reverse, rng)) {
    result.state = std::move(candidate);
    result.accepted = true;
  }
  return result;
}

double fixed_hamiltonian(const PosteriorPoint& point, const Metric& metric, const Vector& p) {
  return -point.log_post + 0.5 * p.dot(metric.solve(p));
}

double riemann_hamiltonian_impl(const PosteriorPoint& point, const Vector& p) {
  const double n = static_cast<double>(point.u.size());
  return -point.log_post + 0.5 * (n * std::log(2.0 * std::numbers::pi) + point.metric->logdet()) +
         0.5 * p.dot(point.metric->solve(p));
}

double riemannian_hamiltonian(const PosteriorPoint& point, const Vector& p) {
  if (point.level < EvalLevel::metric) throw std::logic_error("Riemannian Hamiltonian needs the metric");
  return riemann_hamiltonian_impl(point, p);
}

Trajectory explicit_leapfrog(PosteriorModel& model, const Metric& metric, const PosteriorPoint& start, Vector p,
                             double eps, int steps) {
  if (start.level < EvalLevel::gradient) throw std::logic_error("leapfrog start needs a gradient");
  Trajectory traj;
  traj.end = start;
  const double h0 = fixed_hamiltonian(start, metric, p);
  try {
    for (int step = 0; step < steps; ++step) {
      p += (0.5 * eps) * traj.end.grad;
      const Vector u = traj.end.u + eps * metric.solve(p);
      if (!finite(u)) throw EvaluationFailure{};
      traj.end = model.evaluate(u, EvalLevel::gradient);
      p += (0.5 * eps) * traj.end.grad;
      const double h = fixed_hamiltonian(traj.end, metric, p);
      if (!std::isfinite(h) || std::abs(h - h0) > kEnergyGuard) {
        traj.ok = false;
        traj.failure = "energy error exceeded guard";
        break;
      }
    }
  } catch (const EvaluationFailure&) {
    traj.ok = false;
    traj.failure = "non-finite position";
  } catch (const std::domain_error& e) {
    traj.ok = false;
    traj.failure = e.what();
  } catch (const IndefiniteMatrixError& e) {
    traj.ok = false;
    traj.failure = e.what();
  }
  traj.momentum = std::move(p);
  return traj;
}

Trajectory generalized_leapfrog(PosteriorModel& model, const PosteriorPoint& start, Vector p, double eps, int steps,
                                const NewtonOptions& newton) {
  if (start.level < EvalLevel::metric_derivatives) throw std::logic_error("generalized leapfrog needs metric derivatives");
  const auto n = start.u.size();
  const Matrix identity = Matrix::Identity(n, n);
  Trajectory traj;
  traj.end = start;
  const double h0 = riemann_hamiltonian_impl(start, p);

  auto fail = [&](const std::string& why) {
    traj.ok = false;
    traj.failure = why;
  };

  try {
    RiemannTerms terms = riemann_terms(traj.end);
    for (int step = 0; step < steps && traj.ok; ++step) {
      const PosteriorPoint& here = traj.end;

      // (i) implicit half-step in momentum: F(q) = q - p + (eps/2) dH/du(u, q)
      Vector q = p;
      {
        double prev = std::numeric_limits<double>::infinity();
        int growth = 0;
        int iter = 0;
        for (;; ++iter) {
          const Vector r = q - p + (0.5 * eps) * riemann_force(here, terms, q);
          const double norm = r.lpNorm<Eigen::Infinity>();
          if (!std::isfinite(norm)) throw EvaluationFailure{};
          if (norm <= newton_tolerance(newton, q)) break;
          growth = norm > prev ? growth + 1 : 0;
          if (growth >= 3) throw std::runtime_error("momentum Newton diverged");
          if (iter >= newton.max_iter) throw std::runtime_error("momentum Newton hit the iteration cap");
          prev = norm;
          Matrix jac = identity;
          for (Eigen::Index k = 0; k < n; ++k)
            jac.row(k) -= (0.5 * eps) * (terms.sandwich[static_cast<std::size_t>(k)] * q).transpose();
          q -= jac.partialPivLu().solve(r);
        }
        traj.newton_iterations.push_back(iter);
      }

      // (ii) implicit full step in position: F(v) = v - u - (eps/2)(Ginv(u) q + Ginv(v) q)
      const Vector velocity = here.metric_inverse * q;
      PosteriorPoint next = model.evaluate(here.u + eps * velocity, EvalLevel::metric_derivatives);
      {
        double prev = std::numeric_limits<double>::infinity();
        int growth = 0;
        int iter = 0;
        for (;; ++iter) {
          const Vector r = next.u - here.u - (0.5 * eps) * (velocity + next.metric_inverse * q);
          const double norm = r.lpNorm<Eigen::Infinity>();
          if (!std::isfinite(norm)) throw EvaluationFailure{};
          if (norm <= newton_tolerance(newton, next.u)) break;
          growth = norm > prev ? growth + 1 : 0;
          if (growth >= 3) throw std::runtime_error("position Newton diverged");
          if (iter >= newton.max_iter) throw std::runtime_error("position Newton hit the iteration cap");
          prev = norm;
          Matrix jac = identity;
          const Vector gq = next.metric_inverse * q;
          for (Eigen::Index k = 0; k < n; ++k)
            jac.col(k) += (0.5 * eps) * (next.metric_inverse * (next.dmetric[static_cast<std::size_t>(k)] * gq));
          const Vector v = next.u - jac.partialPivLu().solve(r);
          if (!finite(v)) throw EvaluationFailure{};
          next = model.evaluate(v, EvalLevel::metric_derivatives);
        }
        traj.newton_iterations.push_back(iter);
      }

      // (iii) explicit half-step in momentum at the new position
      traj.end = std::move(next);
      terms = riemann_terms(traj.end);
      p = q - (0.5 * eps) * riemann_force(traj.end, terms, q);

      const double h = riemann_hamiltonian_impl(traj.end, p);
      if (!std::isfinite(h) || std::abs(h - h0) > kEnergyGuard) fail("energy error exceeded guard");
    }
  } catch (const EvaluationFailure&) {
    fail("non-finite state");
  } catch (const std::domain_error& e) {
    fail(e.what());
  } catch (const IndefiniteMatrixError& e) {
    fail(e.what());
  } catch (const std::runtime_error& e) {
    fail(e.what());
  }
  traj.momentum = std::move(p);
  return traj;
}

StepResult srmhmc_step(PosteriorModel& model, const Metric& metric, const PosteriorPoint& current, double eps,
                       int steps, std::mt19937_64& rng) {
  const Vector p = metric.sample_momentum(rng);
  const double h0 = fixed_hamiltonian(current, metric, p);
  Trajectory traj = explicit_leapfrog(model, metric, current, p, eps, steps);
  StepResult result;
  result.state = current;
  if (!traj.ok) {
    result.delta_h = std::numeric_limits<double>::infinity();
    mh_accept(0.0, kNegInf, 0.0, 0.0, rng);
    return result;
  }
  const double h1 = fixed_hamiltonian(traj.end, metric, traj.momentum);
  result.delta_h = h1 - h0;
  if (mh_accept(-h0, -h1, 0.0, 0.0, rng)) {
    result.state = std::move(traj.end);
    result.accepted = true;
  }
  return result;
}

StepResult rmhmc_step(PosteriorModel& model, const PosteriorPoint& current, double eps, int steps,
                      std::mt19937_64& rng, std::vector<int>* newton_iterations, const NewtonOptions& newton) {
  const Vector p = current.metric->sample_momentum(rng);
  const double h0 = riemann_hamiltonian_impl(current, p);
  Trajectory traj = generalized_leapfrog(model, current, p, eps, steps, newton);
  if (newton_iterations)
    newton_iterations->insert(newton_iterations->end(), traj.newton_iterations.begin(), traj.newton_iterations.end());
  StepResult result;
  result.state = current;
  if (!traj.ok) {
    result.delta_h = std::numeric_limits<double>::infinity();
    mh_accept(0.0, kNegInf, 0.0, 0.0, rng);
    return result;
  }
  const double h1 = riemann_hamiltonian_impl(traj.end, traj.momentum);
  result.delta_h = h1 - h0;
  if (mh_accept(-h0, -h1, 0.0, 0.0, rng)) {
    result.state = std::move(traj.end);
    result.accepted = true;
  }
  return result;
}

void ChainConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw std::invalid_argument("step size must be positive");
  if ((kind == SamplerKind::srmhmc || kind == SamplerKind::rmhmc) && leapfrog_steps < 1)
    throw std::invalid_argument("leapfrog steps must be at least 1");
  if (burn_in < 0 || burn_in >= n_samples) throw std::invalid_argument("burn-in must lie in [0, n_samples)");
}

std::vector<double> Chain::retained(Eigen::Index coordinate) const {
  std::vector<double> out;
  for (std::size_t i = static_cast<std::size_t>(burn_in); i < samples.size(); ++i) out.push_back(samples[i][coordinate]);
  return out;
}

double Chain::retained_acceptance_rate() const {
  const std::size_t n = samples.size() - static_cast<std::size_t>(burn_in);
  if (n == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = static_cast<std::size_t>(burn_in); i < accepted.size(); ++i) hits += accepted[i];
  return static_cast<double>(hits) / static_cast<double>(n);
}

Chain run_chain(const ChainConfig& config, PosteriorModel& model, const Vector& start, const Metric* fixed_metric) {
  config.validate();
  if (config.kind == SamplerKind::srmhmc && fixed_metric == nullptr)
    throw std::invalid_argument("sRMHMC needs a fixed metric");
  if (config.kind == SamplerKind::rmhmc || config.kind == SamplerKind::rmmala) {
    if (start.size() > model.workspace().metric_derivative_cap)
      throw std::invalid_argument("dimension exceeds the metric-derivative cap for " + to_string(config.kind));
  }

  std::mt19937_64 rng(config.seed);
  const std::int64_t base = model.solves();
  PosteriorPoint state = model.evaluate(start, required_level(config.kind));

  Chain chain;
  chain.burn_in = config.burn_in;
  const auto n = static_cast<std::size_t>(config.n_samples);
  chain.samples.reserve(n);
  chain.log_posteriors.reserve(n);
  chain.accepted.reserve(n);
  chain.solve_counts.reserve(n);
  chain.delta_h.reserve(n);

  std::size_t hits = 0;
  for (int i = 0; i < config.n_samples; ++i) {
    StepResult step;
    switch (config.kind) {
      case SamplerKind::srmmala: step = mmala_step(model, state, config.step_size, false, rng); break;
      case SamplerKind::rmmala: step = mmala_step(model, state, config.step_size, true, rng); break;
      case SamplerKind::srmhmc:
        step = srmhmc_step(model, *fixed_metric, state, config.step_size, config.leapfrog_steps, rng);
        break;
      case SamplerKind::rmhmc:
        step = rmhmc_step(model, state, config.step_size, config.leapfrog_steps, rng, &chain.newton_iterations);
        break;
    }
    state = std::move(step.state);
    hits += step.accepted ? 1 : 0;
    chain.samples.push_back(state.u);
    chain.log_posteriors.push_back(state.log_post);
    chain.accepted.push_back(step.accepted ? 1 : 0);
    chain.solve_counts.push_back(model.solves() - base);
    chain.delta_h.push_back(step.delta_h);
  }
  chain.acceptance_rate = static_cast<double>(hits) / static_cast<double>(n);
  return chain;
}

}  // namespace pdeinv
