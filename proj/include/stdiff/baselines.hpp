#pragma once

#include "stdiff/table.hpp"

#include <span>
#include <vector>

namespace stdiff {

/// Series-level fills. Input NaNs are missing; observed values pass through.
/// Each throws a baseline error when the series has no observed value.
std::vector<double> fill_locf(std::span<const double> series);
std::vector<double> fill_linear(std::span<const double> series);
/// Forward fill whose carried value decays geometrically toward `target`
/// (the channel mean, zero in z-score space); leading gaps are back-filled.
std::vector<double> fill_locf_decay(std::span<const double> series, double decay, double target = 0.0);

/// Scalar linear-Gaussian state space:
///   level_t = transition * level_{t-1} + drift_t + N(0, process_var)
///   y_t     = level_t + N(0, observation_var)
struct ScalarStateSpace {
  double transition = 1.0;
  double process_var = 1.0;
  double observation_var = 1.0;
  double initial_mean = 0.0;
  double initial_var = 1e7;
};

struct KalmanSmoothResult {
  std::vector<double> mean;
  std::vector<double> variance;
  double log_likelihood = 0.0;
};

/// Kalman filter plus Rauch-Tung-Striebel smoother. `drift` may be empty.
KalmanSmoothResult kalman_smooth(std::span<const double> series, const ScalarStateSpace& model,
                                 std::span<const double> drift = {});

/// Local-level model (random walk plus noise) fitted by maximizing the
/// likelihood with the observation variance concentrated out.
ScalarStateSpace fit_local_level(std::span<const double> series);
std::vector<double> fill_kalman(std::span<const double> series);

enum class BaselineMethod { locf, linear, kalman };

/// Table-level baselines over the listed channels (state channels when empty).
TimeSeriesTable baseline_locf(const TimeSeriesTable& table, std::span<const int> channels = {});
TimeSeriesTable baseline_linear_interp(const TimeSeriesTable& table, std::span<const int> channels = {});
TimeSeriesTable baseline_kalman(const TimeSeriesTable& table, std::span<const int> channels = {});
TimeSeriesTable apply_baseline(BaselineMethod method, const TimeSeriesTable& table,
                               std::span<const int> channels = {});

}  // namespace stdiff
