#pragma once

#include "stdiff/table.hpp"

#include <Eigen/Dense>

#include <cstdint>

namespace stdiff {

enum class PlantKind { linear_gaussian, nonlinear };

std::string_view to_string(PlantKind kind);
PlantKind parse_plant_kind(std::string_view text);

/// Piecewise-constant control levels: each control holds a level drawn
/// uniformly from [low, high] for a geometric number of steps.
struct ControlPolicy {
  double low = -1.0;
  double high = 1.0;
  double mean_hold = 20.0;
};

/// Seasonal exogenous drivers: amplitude * sin(2 pi t / period + phase) + noise.
struct ExogenousProfile {
  double amplitude = 1.0;
  double period = 288.0;
  double noise = 0.1;
};

/// x_t = A g(x_{t-1}) + B u_t + C w_t + process_noise * e_t, with g the
/// identity for the linear plant and s * tanh(x / s) for the nonlinear one.
struct PlantConfig {
  PlantKind kind = PlantKind::linear_gaussian;
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  Eigen::MatrixXd C;
  double process_noise = 0.1;
  double saturation = 1.0;
  ControlPolicy control;
  ExogenousProfile exogenous;
  Eigen::VectorXd x0;
  std::size_t length = 2000;
  std::uint64_t seed = 0;

  int state_dim() const { return static_cast<int>(A.rows()); }
  int control_dim() const { return static_cast<int>(B.cols()); }
  int exogenous_dim() const { return static_cast<int>(C.cols()); }
  void validate() const;

  /// Scalar plant x_t = a x_{t-1} + b u_t + c w_t + sigma e_t.
  static PlantConfig scalar(double a, double b, double sigma, double c = 0.5);
  /// Two states driven by two controls and two exogenous channels, with a
  /// saturating state recurrence.
  static PlantConfig nonlinear_default();
};

struct PlantRun {
  TimeSeriesTable table;
  PlantConfig config;
  Eigen::MatrixXd states;     // D_x x length
  Eigen::MatrixXd controls;   // D_u x length
  Eigen::MatrixXd exogenous;  // D_w x length
};

/// Fully observed simulation. Row 0 holds x0 with the step-0 inputs; rows
/// t >= 1 follow the recurrence. Channels are named x1.., u1.., w1...
PlantRun simulate_plant(const PlantConfig& config);

/// The state recurrence without noise: A g(x_prev) + B u + C w.
Eigen::VectorXd plant_mean(const PlantConfig& config, const Eigen::VectorXd& x_prev,
                           const Eigen::VectorXd& u, const Eigen::VectorXd& w);

}  // namespace stdiff
