#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

namespace stdiff {

/// A state reading x_t in z-score space.
using StateVector = Eigen::VectorXd;

struct ScheduleConfig {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  bool operator==(const ScheduleConfig&) const = default;
};

/// Diffusion constants for steps tau = 1..T. All accessors take the 1-based
/// step index used throughout the sampling and training code.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(const ScheduleConfig& config);

  int steps() const noexcept { return config_.steps; }
  const ScheduleConfig& config() const noexcept { return config_; }

  double beta(int tau) const { return beta_[index(tau)]; }
  double alpha(int tau) const { return alpha_[index(tau)]; }
  double alpha_bar(int tau) const { return alpha_bar_[index(tau)]; }
  double sigma(int tau) const { return sigma_[index(tau)]; }
  /// (1 - alpha) / sqrt(1 - alpha_bar), the noise coefficient of the reverse step.
  double reverse_coefficient(int tau) const { return reverse_coef_[index(tau)]; }

  std::span<const double> betas() const noexcept { return beta_; }
  std::span<const double> alphas() const noexcept { return alpha_; }
  std::span<const double> alpha_bars() const noexcept { return alpha_bar_; }
  std::span<const double> sigmas() const noexcept { return sigma_; }

 private:
  std::size_t index(int tau) const;

  ScheduleConfig config_;
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::vector<double> sigma_;
  std::vector<double> reverse_coef_;
};

/// Linear beta ramp from beta_start to beta_end over `steps` steps.
NoiseSchedule build_schedule(int steps, double beta_start, double beta_end);

/// sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps, column-wise for batches.
Eigen::MatrixXd forward_noise(const Eigen::MatrixXd& x0, int tau, const Eigen::MatrixXd& eps,
                              const NoiseSchedule& schedule);

/// One ancestral denoising update. `z` must be present exactly when tau > 1.
Eigen::MatrixXd reverse_step(const Eigen::MatrixXd& x_tau, const Eigen::MatrixXd& eps_hat, int tau,
                             const NoiseSchedule& schedule,
                             const std::optional<Eigen::MatrixXd>& z = std::nullopt);

/// Squared Euclidean error ||eps - eps_hat||^2, averaged over columns.
double noise_prediction_loss(const Eigen::MatrixXd& eps, const Eigen::MatrixXd& eps_hat);

}  // namespace stdiff
