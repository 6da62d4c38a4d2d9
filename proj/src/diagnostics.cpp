#include "pdeinv/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace pdeinv {

namespace {

struct Centered {
  std::vector<double> x;
  double denom = 0.0;
};

Centered center(std::span<const double> series) {
  Centered c;
  const double n = static_cast<double>(series.size());
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= n;
  c.x.reserve(series.size());
  for (double v : series) c.x.push_back(v - mean);
  for (double v : c.x) c.denom += v * v;
  return c;
}

double lag_sum(const std::vector<double>& x, std::size_t lag) {
  double s = 0.0;
  for (std::size_t t = 0; t + lag < x.size(); ++t) s += x[t] * x[t + lag];
  return s;
}

}  // namespace

std::vector<double> autocorrelation(std::span<const double> series, int max_lag) {
  if (series.empty()) throw std::invalid_argument("autocorrelation of an empty series");
  if (max_lag < 0) throw std::invalid_argument("max_lag must be nonnegative");
  const Centered c = center(series);
  std::vector<double> acf(static_cast<std::size_t>(max_lag) + 1, std::numeric_limits<double>::quiet_NaN());
  acf[0] = 1.0;
  if (!(c.denom > 0.0)) return acf;
  for (std::size_t lag = 1; lag < acf.size(); ++lag) acf[lag] = lag < c.x.size() ? lag_sum(c.x, lag) / c.denom : 0.0;
  return acf;
}

double integrated_autocorrelation_time(std::span<const double> series) {
  if (series.size() < 4) throw std::invalid_argument("series too short for an autocorrelation time");
  const Centered c = center(series);
  if (!(c.denom > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = c.x.size();
  // Sum of pair sums Gamma_k = rho(2k) + rho(2k+1) while they stay positive.
  double sum = 0.0;
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    const double gamma = (lag_sum(c.x, 2 * k) + lag_sum(c.x, 2 * k + 1)) / c.denom;
    if (k > 0 && !(gamma > 0.0)) break;
    sum += gamma;
  }
  return -1.0 + 2.0 * sum;
}

double effective_sample_size(std::span<const double> series) {
  const double n = static_cast<double>(series.size());
  const double tau = integrated_autocorrelation_time(series);
  if (std::isnan(tau)) return std::numeric_limits<double>::quiet_NaN();
  return n / std::max(tau, 1.0 / std::log10(n));
}

double quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw std::invalid_argument("quantile of empty data");
  if (!(prob >= 0.0 && prob <= 1.0)) throw std::invalid_argument("quantile probability outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Band credible_band(std::span<const Vector> samples, double level) {
  if (samples.size() < 40) throw std::invalid_argument("credible band needs at least 40 samples");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("credible level must lie in (0, 1)");
  const Eigen::Index n = samples.front().size();
  const double tail = 0.5 * (1.0 - level);
  Band band{Vector(n), Vector(n)};
  std::vector<double> column(samples.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < samples.size(); ++s) column[s] = samples[s][i];
    band.lower[i] = quantile(column, tail);
    band.upper[i] = quantile(column, 1.0 - tail);
  }
  return band;
}

Vector pointwise_mean(std::span<const Vector> samples) {
  if (samples.empty()) throw std::invalid_argument("mean of no samples");
  Vector mean = Vector::Zero(samples.front().size());
  for (const Vector& s : samples) mean += s;
  return mean / static_cast<double>(samples.size());
}

Vector pointwise_std(std::span<const Vector> samples) {
  if (samples.size() < 2) throw std::invalid_argument("standard deviation needs two samples");
  const Vector mean = pointwise_mean(samples);
  Vector var = Vector::Zero(mean.size());
  for (const Vector& s : samples) var += (s - mean).array().square().matrix();
  return (var / static_cast<double>(samples.size() - 1)).cwiseSqrt();
}

SolveReport solve_report(std::int64_t map_solves, std::int64_t metric_solves, std::span<const std::int64_t> cumulative) {
  SolveReport r;
  r.map = map_solves;
  r.metric = metric_solves;
  r.sampling = cumulative.empty() ? 0 : cumulative.back();
  r.total = r.map + r.metric + r.sampling;
  r.per_sample = cumulative.empty() ? 0.0 : static_cast<double>(r.sampling) / static_cast<double>(cumulative.size());
  return r;
}

}  // namespace pdeinv
