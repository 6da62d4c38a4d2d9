#include "pdeinv/map_optimizer.hpp"

#include "pdeinv/metric.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace pdeinv {

MapResult find_map(DerivativeWorkspace& ws, const PriorBasis& prior, const Vector& u_init, const MapOptions& options) {
  if (!(options.tol > 0.0) || options.rtol < 0.0) throw std::invalid_argument("MAP tolerance must be positive");

  MapResult result;
  Vector u = u_init;
  ws.set_point(u);
  double f = ws.misfit() + prior_neg_log(prior, u);
  result.objective_history.push_back(f);

  double threshold = options.tol;
  for (int iter = 0;; ++iter) {
    ws.set_point(u);
    const Vector g = ws.misfit_gradient() + prior_gradient(prior, u);
    result.gradient_norm = g.norm();
    if (iter == 0) threshold = std::max(options.tol, options.rtol * result.gradient_norm);
    if (result.gradient_norm <= threshold) {
      result.u = u;
      result.iterations = iter;
      result.objective = f;
      return result;
    }
    if (iter >= options.max_iter) {
      throw std::runtime_error("MAP search did not converge in " + std::to_string(options.max_iter) +
                               " iterations (gradient norm " + std::to_string(result.gradient_norm) + ")");
    }

    const Metric g_hat = build_exact(ws, prior, u, options.exec);
    const Vector step = g_hat.solve(-g);
    const double slope = g.dot(step);

    // Near the optimum the decrease drops below rounding of f; allow for it.
    const double slack = 8.0 * std::numeric_limits<double>::epsilon() * std::abs(f);
    double t = 1.0;
    bool accepted = false;
    for (int k = 0; k <= options.max_halvings; ++k, t *= 0.5) {
      const Vector trial = u + t * step;
      double f_trial = std::numeric_limits<double>::infinity();
      try {
        ws.set_point(trial);
        f_trial = ws.misfit() + prior_neg_log(prior, trial);
      } catch (const std::domain_error&) {
      } catch (const IndefiniteMatrixError&) {
      }
      if (std::isfinite(f_trial) && f_trial <= f + options.armijo * t * slope + slack) {
        u = trial;
        f = f_trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) throw std::runtime_error("MAP line search failed after " + std::to_string(options.max_halvings) + " halvings");
    result.objective_history.push_back(f);
  }
}

}  // namespace pdeinv
