#include "stdiff/plant.hpp"

#include "stdiff/errors.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>
#include <fmt/core.h>

namespace stdiff {

std::string_view to_string(PlantKind kind) {
  return kind == PlantKind::linear_gaussian ? "linear_gaussian" : "nonlinear";
}

PlantKind parse_plant_kind(std::string_view text) {
  if (text == "linear_gaussian" || text == "linear") return PlantKind::linear_gaussian;
  if (text == "nonlinear") return PlantKind::nonlinear;
  throw Error(ErrorKind::config, fmt::format("unknown plant kind '{}'", text));
}

void PlantConfig::validate() const {
  const auto n = A.rows();
  if (n < 1 || A.cols() != n) throw Error(ErrorKind::config, "plant A must be square and non-empty");
  if (B.rows() != n || C.rows() != n) {
    throw Error(ErrorKind::config, "plant B and C must have one row per state");
  }
  if (x0.size() != 0 && x0.size() != n) throw Error(ErrorKind::config, "plant x0 has wrong size");
  if (!(process_noise >= 0.0)) throw Error(ErrorKind::config, "process noise must be >= 0");
  if (kind == PlantKind::nonlinear && !(saturation > 0.0)) {
    throw Error(ErrorKind::config, "saturation scale must be positive");
  }
  if (!(control.mean_hold >= 1.0) || control.low > control.high) {
    throw Error(ErrorKind::config, "control policy needs mean_hold >= 1 and low <= high");
  }
  if (!(exogenous.period > 0.0) || !(exogenous.noise >= 0.0)) {
    throw Error(ErrorKind::config, "exogenous period must be positive and noise >= 0");
  }
  if (length < 2) throw Error(ErrorKind::config, "plant length must be at least 2");
  const double radius = A.eigenvalues().cwiseAbs().maxCoeff();
  if (!(radius < 1.0)) {
    throw Error(ErrorKind::config, fmt::format("plant A is not stable (spectral radius {:.4f})", radius));
  }
}

PlantConfig PlantConfig::scalar(double a, double b, double sigma, double c) {
  PlantConfig cfg;
  cfg.kind = PlantKind::linear_gaussian;
  cfg.A = Eigen::MatrixXd::Constant(1, 1, a);
  cfg.B = Eigen::MatrixXd::Constant(1, 1, b);
  cfg.C = Eigen::MatrixXd::Constant(1, 1, c);
  cfg.process_noise = sigma;
  return cfg;
}

PlantConfig PlantConfig::nonlinear_default() {
  PlantConfig cfg;
  cfg.kind = PlantKind::nonlinear;
  cfg.A.resize(2, 2);
  cfg.A << 0.8, 0.1,
          -0.1, 0.7;
  cfg.B.resize(2, 2);
  cfg.B << 0.6, 0.2,
           0.1, 0.5;
  cfg.C.resize(2, 2);
  cfg.C << 0.3, 0.0,
           0.0, 0.3;
  cfg.process_noise = 0.1;
  cfg.saturation = 1.5;
  cfg.control = {-1.0, 1.0, 20.0};
  cfg.exogenous = {1.0, 288.0, 0.1};
  return cfg;
}

Eigen::VectorXd plant_mean(const PlantConfig& cfg, const Eigen::VectorXd& x_prev,
                           const Eigen::VectorXd& u, const Eigen::VectorXd& w) {
  Eigen::VectorXd g = x_prev;
  if (cfg.kind == PlantKind::nonlinear) {
    g = cfg.saturation * (x_prev.array() / cfg.saturation).tanh();
  }
  Eigen::VectorXd out = cfg.A * g;
  if (cfg.B.cols() > 0) out += cfg.B * u;
  if (cfg.C.cols() > 0) out += cfg.C * w;
  return out;
}

PlantRun simulate_plant(const PlantConfig& cfg) {
  cfg.validate();
  const int nx = cfg.state_dim();
  const int nu = cfg.control_dim();
  const int nw = cfg.exogenous_dim();
  const auto len = static_cast<Eigen::Index>(cfg.length);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> level(cfg.control.low, cfg.control.high);
  std::geometric_distribution<int> hold(1.0 / cfg.control.mean_hold);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  Eigen::MatrixXd u(nu, len);
  for (int i = 0; i < nu; ++i) {
    Eigen::Index t = 0;
    while (t < len) {
      const double value = cfg.control.low == cfg.control.high ? cfg.control.low : level(rng);
      const Eigen::Index run = 1 + hold(rng);
      for (Eigen::Index k = 0; k < run && t < len; ++k, ++t) u(i, t) = value;
    }
  }

  Eigen::MatrixXd w(nw, len);
  for (int i = 0; i < nw; ++i) {
    const double ph = phase(rng);
    const double period = cfg.exogenous.period * (1.0 + 0.37 * i);
    for (Eigen::Index t = 0; t < len; ++t) {
      double value = cfg.exogenous.amplitude * std::sin(2.0 * std::numbers::pi * t / period + ph);
      if (cfg.exogenous.noise > 0.0) value += cfg.exogenous.noise * normal(rng);
      w(i, t) = value;
    }
  }

  Eigen::MatrixXd x(nx, len);
  x.col(0) = cfg.x0.size() == nx ? cfg.x0 : Eigen::VectorXd::Zero(nx);
  for (Eigen::Index t = 1; t < len; ++t) {
    Eigen::VectorXd next = plant_mean(cfg, x.col(t - 1), u.col(t), w.col(t));
    if (cfg.process_noise > 0.0) {
      for (int i = 0; i < nx; ++i) next(i) += cfg.process_noise * normal(rng);
    }
    x.col(t) = next;
  }

  std::vector<std::string> timestamps(cfg.length);
  for (std::size_t t = 0; t < cfg.length; ++t) timestamps[t] = std::to_string(t);
  std::vector<Channel> channels;
  for (int i = 0; i < nx; ++i) channels.push_back({fmt::format("x{}", i + 1), ChannelRole::state});
  for (int i = 0; i < nu; ++i) channels.push_back({fmt::format("u{}", i + 1), ChannelRole::control});
  for (int i = 0; i < nw; ++i) channels.push_back({fmt::format("w{}", i + 1), ChannelRole::exogenous});
  Eigen::MatrixXd values(len, nx + nu + nw);
  values.leftCols(nx) = x.transpose();
  values.middleCols(nx, nu) = u.transpose();
  values.rightCols(nw) = w.transpose();

  return {TimeSeriesTable(std::move(timestamps), std::move(channels), std::move(values)), cfg,
          std::move(x), std::move(u), std::move(w)};
}

}  // namespace stdiff
