#include "stdiff/baselines.hpp"

#include "stdiff/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/core.h>

namespace stdiff {

namespace {

std::vector<std::size_t> observed_indices(std::span<const double> series) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (!std::isnan(series[i])) idx.push_back(i);
  }
  if (idx.empty()) throw Error(ErrorKind::baseline, "series has no observed values");
  return idx;
}

std::vector<double> column(const TimeSeriesTable& table, int c) {
  std::vector<double> out(table.length());
  for (std::size_t r = 0; r < table.length(); ++r) out[r] = table.value(r, static_cast<std::size_t>(c));
  return out;
}

template <typename Fill>
TimeSeriesTable fill_table(const TimeSeriesTable& table, std::span<const int> channels, Fill fill) {
  std::vector<int> targets(channels.begin(), channels.end());
  if (targets.empty()) targets = table.state_channels();
  Eigen::MatrixXd values = table.values();
  for (const int c : targets) {
    std::vector<double> series;
    try {
      series = fill(column(table, c));
    } catch (const Error& e) {
      throw Error(ErrorKind::baseline, fmt::format("channel '{}': {}", table.channels()[c].name, e.what()));
    }
    for (std::size_t r = 0; r < table.length(); ++r) values(static_cast<Eigen::Index>(r), c) = series[r];
  }
  return table.with_values(std::move(values));
}

}  // namespace

std::vector<double> fill_locf(std::span<const double> series) {
  const auto idx = observed_indices(series);
  std::vector<double> out(series.begin(), series.end());
  for (std::size_t i = 0; i < idx.front(); ++i) out[i] = series[idx.front()];
  double last = series[idx.front()];
  for (std::size_t i = idx.front(); i < out.size(); ++i) {
    if (std::isnan(out[i])) {
      out[i] = last;
    } else {
      last = out[i];
    }
  }
  return out;
}

std::vector<double> fill_locf_decay(std::span<const double> series, double decay, double target) {
  const auto idx = observed_indices(series);
  std::vector<double> out(series.begin(), series.end());
  for (std::size_t i = 0; i < idx.front(); ++i) out[i] = series[idx.front()];
  double last = series[idx.front()];
  double factor = 1.0;
  for (std::size_t i = idx.front(); i < out.size(); ++i) {
    if (std::isnan(out[i])) {
      factor *= decay;
      out[i] = target + (last - target) * factor;
    } else {
      last = out[i];
      factor = 1.0;
    }
  }
  return out;
}

std::vector<double> fill_linear(std::span<const double> series) {
  const auto idx = observed_indices(series);
  std::vector<double> out(series.begin(), series.end());
  for (std::size_t i = 0; i < idx.front(); ++i) out[i] = series[idx.front()];
  for (std::size_t i = idx.back() + 1; i < out.size(); ++i) out[i] = series[idx.back()];
  for (std::size_t k = 0; k + 1 < idx.size(); ++k) {
    const std::size_t a = idx[k];
    const std::size_t b = idx[k + 1];
    for (std::size_t i = a + 1; i < b; ++i) {
      const double frac = static_cast<double>(i - a) / static_cast<double>(b - a);
      out[i] = series[a] + frac * (series[b] - series[a]);
    }
  }
  return out;
}

KalmanSmoothResult kalman_smooth(std::span<const double> series, const ScalarStateSpace& m,
                                 std::span<const double> drift) {
  const std::size_t n = series.size();
  if (!drift.empty() && drift.size() != n) {
    throw Error(ErrorKind::shape, "drift length must match the series");
  }
  KalmanSmoothResult res;
  res.mean.assign(n, 0.0);
  res.variance.assign(n, 0.0);
  if (n == 0) return res;

  std::vector<double> pred_mean(n), pred_var(n), filt_mean(n), filt_var(n);
  double mean = m.initial_mean;
  double var = m.initial_var;
  for (std::size_t t = 0; t < n; ++t) {
    if (t > 0) {
      mean = m.transition * mean + (drift.empty() ? 0.0 : drift[t]);
      var = m.transition * m.transition * var + m.process_var;
    }
    pred_mean[t] = mean;
    pred_var[t] = var;
    if (!std::isnan(series[t])) {
      const double innovation = series[t] - mean;
      const double s = var + m.observation_var;
      const double gain = var / s;
      res.log_likelihood += -0.5 * (std::log(2.0 * std::numbers::pi * s) + innovation * innovation / s);
      mean += gain * innovation;
      var *= (1.0 - gain);
    }
    filt_mean[t] = mean;
    filt_var[t] = var;
  }

  res.mean[n - 1] = filt_mean[n - 1];
  res.variance[n - 1] = filt_var[n - 1];
  for (std::size_t t = n - 1; t-- > 0;) {
    const double j = filt_var[t] * m.transition / pred_var[t + 1];
    res.mean[t] = filt_mean[t] + j * (res.mean[t + 1] - pred_mean[t + 1]);
    res.variance[t] = filt_var[t] + j * j * (res.variance[t + 1] - pred_var[t + 1]);
  }
  return res;
}

namespace {

// Concentrated log-likelihood of the local-level model for q = process/observation
// variance ratio, with the first observation used to initialize the level.
struct ConcentratedFit {
  double loglik;
  double observation_var;
};

ConcentratedFit concentrated_loglik(std::span<const double> y, std::size_t first, double q) {
  double level = y[first];
  double p = 1.0;  // posterior variance after the first observation, in units of sigma^2
  double sum_sq = 0.0;
  double sum_log = 0.0;
  std::size_t count = 0;
  for (std::size_t t = first + 1; t < y.size(); ++t) {
    p += q;
    if (std::isnan(y[t])) continue;
    const double f = p + 1.0;
    const double v = y[t] - level;
    sum_sq += v * v / f;
    sum_log += std::log(f);
    ++count;
    level += (p / f) * v;
    p = p / f;
  }
  if (count == 0) return {0.0, 1.0};
  const double sigma2 = std::max(sum_sq / static_cast<double>(count), 1e-300);
  return {-0.5 * (static_cast<double>(count) * std::log(sigma2) + sum_log), sigma2};
}

}  // namespace

ScalarStateSpace fit_local_level(std::span<const double> series) {
  const auto idx = observed_indices(series);
  ScalarStateSpace model;
  model.transition = 1.0;
  model.initial_mean = series[idx.front()];
  if (idx.size() < 3) {
    model.observation_var = 1.0;
    model.process_var = 1.0;
    return model;
  }

  auto objective = [&](double log_q) { return concentrated_loglik(series, idx.front(), std::exp(log_q)).loglik; };
  double best = -12.0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (double g = -12.0; g <= 6.0 + 1e-9; g += 0.5) {
    const double v = objective(g);
    if (v > best_value) {
      best_value = v;
      best = g;
    }
  }
  // Golden-section refinement around the best grid point.
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = best - 0.5;
  double hi = best + 0.5;
  double x1 = hi - phi * (hi - lo);
  double x2 = lo + phi * (hi - lo);
  double f1 = objective(x1);
  double f2 = objective(x2);
  for (int it = 0; it < 60; ++it) {
    if (f1 > f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = objective(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = objective(x2);
    }
  }
  const double log_q = 0.5 * (lo + hi);
  const double q = std::exp(log_q);
  const auto fit = concentrated_loglik(series, idx.front(), q);
  model.observation_var = fit.observation_var;
  model.process_var = q * fit.observation_var;
  model.initial_var = 1e7 * std::max(fit.observation_var, 1e-12);
  return model;
}

std::vector<double> fill_kalman(std::span<const double> series) {
  const auto model = fit_local_level(series);
  const auto idx = observed_indices(series);
  // Start the filter at the first observation; earlier steps take the smoothed
  // level at that point.
  const std::size_t first = idx.front();
  const auto smoothed = kalman_smooth(series.subspan(first), model);
  std::vector<double> out(series.begin(), series.end());
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (!std::isnan(out[i])) continue;
    out[i] = i < first ? smoothed.mean.front() : smoothed.mean[i - first];
  }
  return out;
}

TimeSeriesTable baseline_locf(const TimeSeriesTable& table, std::span<const int> channels) {
  return fill_table(table, channels, [](const std::vector<double>& s) { return fill_locf(s); });
}

TimeSeriesTable baseline_linear_interp(const TimeSeriesTable& table, std::span<const int> channels) {
  return fill_table(table, channels, [](const std::vector<double>& s) { return fill_linear(s); });
}

TimeSeriesTable baseline_kalman(const TimeSeriesTable& table, std::span<const int> channels) {
  return fill_table(table, channels, [](const std::vector<double>& s) { return fill_kalman(s); });
}

TimeSeriesTable apply_baseline(BaselineMethod method, const TimeSeriesTable& table, std::span<const int> channels) {
  switch (method) {
    case BaselineMethod::locf: return baseline_locf(table, channels);
    case BaselineMethod::linear: return baseline_linear_interp(table, channels);
    case BaselineMethod::kalman: return baseline_kalman(table, channels);
  }
  return table;
}

}  // namespace stdiff
