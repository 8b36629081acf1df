#include "stdiff/diffusion.hpp"

#include "stdiff/errors.hpp"

#include <cmath>
#include <limits>

#include <fmt/core.h>

namespace stdiff {

namespace {

void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::shape, fmt::format("{}: {}x{} vs {}x{}", what, a.rows(), a.cols(),
                                              b.rows(), b.cols()));
  }
}

}  // namespace

NoiseSchedule::NoiseSchedule(const ScheduleConfig& config) : config_(config) {
  const int steps = config.steps;
  if (steps < 1) {
    throw Error(ErrorKind::parameter, fmt::format("schedule needs at least one step, got {}", steps));
  }
  if (!(config.beta_start > 0.0) || !(config.beta_start <= config.beta_end) ||
      !(config.beta_end < 1.0)) {
    throw Error(ErrorKind::parameter,
                fmt::format("beta range must satisfy 0 < start <= end < 1, got [{}, {}]",
                            config.beta_start, config.beta_end));
  }
  beta_.resize(steps);
  alpha_.resize(steps);
  alpha_bar_.resize(steps);
  sigma_.resize(steps);
  reverse_coef_.resize(steps);

  double running = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    beta_[i] = config.beta_start + frac * (config.beta_end - config.beta_start);
    alpha_[i] = 1.0 - beta_[i];
    running *= alpha_[i];
    alpha_bar_[i] = running;
    if (!(running >= std::numeric_limits<double>::min())) {
      throw Error(ErrorKind::parameter,
                  fmt::format("alpha_bar underflows at step {}; shorten the schedule or lower beta", i + 1));
    }
    sigma_[i] = std::sqrt(beta_[i]);
    reverse_coef_[i] = (1.0 - alpha_[i]) / std::sqrt(1.0 - alpha_bar_[i]);
  }
}

std::size_t NoiseSchedule::index(int tau) const {
  if (tau < 1 || tau > config_.steps) {
    throw Error(ErrorKind::parameter,
                fmt::format("diffusion step {} outside 1..{}", tau, config_.steps));
  }
  return static_cast<std::size_t>(tau - 1);
}

NoiseSchedule build_schedule(int steps, double beta_start, double beta_end) {
  return NoiseSchedule(ScheduleConfig{steps, beta_start, beta_end});
}

Eigen::MatrixXd forward_noise(const Eigen::MatrixXd& x0, int tau, const Eigen::MatrixXd& eps,
                              const NoiseSchedule& schedule) {
  require_same_shape(x0, eps, "forward_noise");
  const double ab = schedule.alpha_bar(tau);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Eigen::MatrixXd reverse_step(const Eigen::MatrixXd& x_tau, const Eigen::MatrixXd& eps_hat, int tau,
                             const NoiseSchedule& schedule,
                             const std::optional<Eigen::MatrixXd>& z) {
  require_same_shape(x_tau, eps_hat, "reverse_step");
  const double coef = schedule.reverse_coefficient(tau);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(tau));
  if (tau > 1 && !z) {
    throw Error(ErrorKind::contract, fmt::format("reverse step {} requires fresh noise", tau));
  }
  if (tau == 1 && z) {
    throw Error(ErrorKind::contract, "reverse step 1 must not inject noise");
  }
  Eigen::MatrixXd out = inv_sqrt_alpha * (x_tau - coef * eps_hat);
  if (z) {
    require_same_shape(x_tau, *z, "reverse_step noise");
    out += schedule.sigma(tau) * *z;
  }
  return out;
}

double noise_prediction_loss(const Eigen::MatrixXd& eps, const Eigen::MatrixXd& eps_hat) {
  require_same_shape(eps, eps_hat, "noise_prediction_loss");
  if (eps.cols() == 0) return 0.0;
  return (eps - eps_hat).squaredNorm() / static_cast<double>(eps.cols());
}

}  // namespace stdiff
