#include <doctest.h>

#include "stdiff/baselines.hpp"
#include "stdiff/errors.hpp"
#include "stdiff/plant.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

using namespace stdiff;

namespace {

constexpr double gap = kMissing;

// Smoother means, variances and log-likelihood by conditioning the joint
// Gaussian of (levels, observations) directly.
KalmanSmoothResult dense_oracle(const std::vector<double>& y, const ScalarStateSpace& m,
                                const std::vector<double>& drift) {
  const auto n = static_cast<Eigen::Index>(y.size());
  Eigen::VectorXd mu(n);
  Eigen::VectorXd var(n);
  mu(0) = m.initial_mean;
  var(0) = m.initial_var;
  for (Eigen::Index t = 1; t < n; ++t) {
    mu(t) = m.transition * mu(t - 1) + drift[static_cast<std::size_t>(t)];
    var(t) = m.transition * m.transition * var(t - 1) + m.process_var;
  }
  Eigen::MatrixXd cov(n, n);
  for (Eigen::Index s = 0; s < n; ++s) {
    for (Eigen::Index t = s; t < n; ++t) cov(s, t) = cov(t, s) = std::pow(m.transition, double(t - s)) * var(s);
  }
  std::vector<Eigen::Index> obs;
  for (Eigen::Index t = 0; t < n; ++t) {
    if (!std::isnan(y[static_cast<std::size_t>(t)])) obs.push_back(t);
  }
  const auto k = static_cast<Eigen::Index>(obs.size());
  Eigen::MatrixXd s_oo(k, k), s_xo(n, k);
  Eigen::VectorXd resid(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    resid(i) = y[static_cast<std::size_t>(obs[i])] - mu(obs[i]);
    for (Eigen::Index j = 0; j < k; ++j) s_oo(i, j) = cov(obs[i], obs[j]) + (i == j ? m.observation_var : 0.0);
    for (Eigen::Index t = 0; t < n; ++t) s_xo(t, i) = cov(t, obs[i]);
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(s_oo);
  const Eigen::VectorXd mean = mu + s_xo * llt.solve(resid);
  const Eigen::MatrixXd post = cov - s_xo * llt.solve(s_xo.transpose());
  KalmanSmoothResult out;
  for (Eigen::Index t = 0; t < n; ++t) {
    out.mean.push_back(mean(t));
    out.variance.push_back(post(t, t));
  }
  const Eigen::MatrixXd l = llt.matrixL();
  out.log_likelihood = -0.5 * (resid.dot(llt.solve(resid)) + 2.0 * l.diagonal().array().log().sum() +
                               double(k) * std::log(2.0 * std::numbers::pi));
  return out;
}

}  // namespace

TEST_CASE("linear interpolation and locf on a simple gap") {
  const std::vector<double> s = {1.0, gap, gap, gap, 5.0};
  CHECK(fill_linear(s) == std::vector<double>{1.0, 2.0, 3.0, 4.0, 5.0});
  CHECK(fill_locf(s) == std::vector<double>{1.0, 1.0, 1.0, 1.0, 5.0});
}

TEST_CASE("edges are extended") {
  const std::vector<double> s = {gap, gap, 2.0, gap, 4.0, gap};
  CHECK(fill_locf(s) == std::vector<double>{2.0, 2.0, 2.0, 2.0, 4.0, 4.0});
  CHECK(fill_linear(s) == std::vector<double>{2.0, 2.0, 2.0, 3.0, 4.0, 4.0});
}

TEST_CASE("decaying locf relaxes toward its target") {
  const std::vector<double> s = {gap, 2.0, gap, gap, 1.0};
  const auto out = fill_locf_decay(s, 0.5, 0.0);
  CHECK(out == std::vector<double>{2.0, 2.0, 1.0, 0.5, 1.0});
  const auto held = fill_locf_decay(s, 1.0, 0.0);
  CHECK(held == fill_locf(s));
}

TEST_CASE("all-missing series is a baseline error") {
  const std::vector<double> s = {gap, gap};
  for (auto fn : {fill_locf, fill_linear, fill_kalman}) {
    try {
      fn(s);
      FAIL("expected an Error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::baseline);
    }
  }
  Eigen::MatrixXd v(2, 1);
  v << gap, gap;
  const TimeSeriesTable t({"0", "1"}, {{"x", ChannelRole::state}}, v);
  CHECK_THROWS_AS(baseline_locf(t), Error);
}

TEST_CASE("kalman smoother matches dense Gaussian conditioning on the scalar plant") {
  auto cfg = PlantConfig::scalar(0.9, 1.0, 0.1);
  cfg.length = 150;
  cfg.seed = 8;
  const auto run = simulate_plant(cfg);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::bernoulli_distribution drop(0.3);
  std::vector<double> y(cfg.length), drift(cfg.length, 0.0);
  for (std::size_t t = 0; t < cfg.length; ++t) {
    y[t] = drop(rng) || (t >= 60 && t < 90) ? gap : run.states(0, static_cast<Eigen::Index>(t)) + noise(rng);
    drift[t] = 1.0 * run.controls(0, static_cast<Eigen::Index>(t)) + 0.5 * run.exogenous(0, static_cast<Eigen::Index>(t));
  }
  ScalarStateSpace model;
  model.transition = 0.9;
  model.process_var = 0.01;
  model.observation_var = 0.0025;
  model.initial_mean = 0.0;
  model.initial_var = 0.01 / (1.0 - 0.81);

  const auto fast = kalman_smooth(y, model, drift);
  const auto dense = dense_oracle(y, model, drift);
  for (std::size_t t = 0; t < y.size(); ++t) {
    REQUIRE(std::abs(fast.mean[t] - dense.mean[t]) <= 1e-8);
    REQUIRE(std::abs(fast.variance[t] - dense.variance[t]) <= 1e-8);
  }
  CHECK(fast.log_likelihood == doctest::Approx(dense.log_likelihood).epsilon(1e-9));
}

TEST_CASE("local level fit recovers the signal-to-noise ratio") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  std::vector<double> y(4000);
  double level = 10.0;
  for (auto& v : y) {
    level += std::sqrt(0.1) * normal(rng);
    v = level + normal(rng);
  }
  for (std::size_t t = 500; t < 700; ++t) y[t] = gap;
  const auto m = fit_local_level(y);
  CHECK(m.observation_var == doctest::Approx(1.0).epsilon(0.15));
  CHECK(m.process_var / m.observation_var > 0.05);
  CHECK(m.process_var / m.observation_var < 0.2);

  // The fitted ratio is a local maximum of the exact likelihood.
  auto loglik = [&](double ratio) {
    ScalarStateSpace probe = m;
    probe.process_var = ratio * m.observation_var;
    return kalman_smooth(y, probe).log_likelihood;
  };
  const double ratio = m.process_var / m.observation_var;
  CHECK(loglik(ratio) >= loglik(ratio * 1.2));
  CHECK(loglik(ratio) >= loglik(ratio / 1.2));
}

TEST_CASE("kalman fill keeps observations and fills every gap") {
  std::vector<double> y = {gap, 1.0, 1.2, gap, gap, 1.1, 0.9, 1.0, gap, 1.3, 1.2, gap};
  const auto out = fill_kalman(y);
  for (std::size_t t = 0; t < y.size(); ++t) {
    CHECK(std::isfinite(out[t]));
    if (!std::isnan(y[t])) CHECK(out[t] == y[t]);
  }
  CHECK(out[3] > 0.8);
  CHECK(out[3] < 1.4);
}

TEST_CASE("table baselines touch only the chosen channels") {
  Eigen::MatrixXd v(5, 2);
  v << 1.0, 7.0, gap, gap, gap, 8.0, gap, gap, 5.0, 9.0;
  const TimeSeriesTable t({"0", "1", "2", "3", "4"}, {{"x", ChannelRole::state}, {"u", ChannelRole::control}}, v);
  const auto lin = baseline_linear_interp(t);
  CHECK(lin.value(2, 0) == 3.0);
  CHECK_FALSE(lin.observed(1, 1));
  const int cov[] = {1};
  const auto cov_filled = apply_baseline(BaselineMethod::locf, t, cov);
  CHECK(cov_filled.value(1, 1) == 7.0);
  CHECK_FALSE(cov_filled.observed(1, 0));
  const auto kal = baseline_kalman(t);
  for (std::size_t r = 0; r < 5; ++r) CHECK(kal.observed(r, 0));
}
