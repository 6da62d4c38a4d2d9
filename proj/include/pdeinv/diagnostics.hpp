#pragma once

// Chain statistics on retained (post burn-in) samples.

#include "pdeinv/fem.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace pdeinv {

/// Biased-normalization ACF for lags 0..max_lag. For a constant series lag 0 is 1
/// and the remaining lags are NaN.
std::vector<double> autocorrelation(std::span<const double> series, int max_lag);

/// Integrated autocorrelation time 1 + 2 sum rho(l), truncated by Geyer's initial positive sequence.
double integrated_autocorrelation_time(std::span<const double> series);

/// n / IACT, with the IACT floored at 1 / log10(n) so the estimate is capped at n log10(n).
double effective_sample_size(std::span<const double> series);

struct Band {
  Vector lower;
  Vector upper;
};

/// Pointwise equal-tailed band from linearly interpolated sample quantiles.
/// Throws std::invalid_argument with fewer than 40 samples.
Band credible_band(std::span<const Vector> samples, double level = 0.95);

Vector pointwise_mean(std::span<const Vector> samples);
Vector pointwise_std(std::span<const Vector> samples);

/// Linear-interpolation quantile of unsorted data, 0 <= prob <= 1.
double quantile(std::vector<double> values, double prob);

struct SolveReport {
  std::int64_t map = 0;
  std::int64_t metric = 0;
  std::int64_t sampling = 0;
  std::int64_t total = 0;
  double per_sample = 0.0;  // sampling solves / samples
};

/// `cumulative` holds sampling-phase solve counts after each sample.
SolveReport solve_report(std::int64_t map_solves, std::int64_t metric_solves, std::span<const std::int64_t> cumulative);

}  // namespace pdeinv
