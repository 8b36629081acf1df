#include <doctest.h>

#include "stdiff/diffusion.hpp"
#include "stdiff/errors.hpp"

#include <cmath>
#include <random>

using namespace stdiff;
using Eigen::MatrixXd;

namespace {

MatrixXd col(std::initializer_list<double> v) {
  MatrixXd m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (const double x : v) m(i++, 0) = x;
  return m;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::io;
}

}  // namespace

TEST_CASE("default schedule endpoints") {
  const auto s = build_schedule(1000, 1e-4, 0.02);
  CHECK(s.steps() == 1000);
  CHECK(s.beta(1) == 1e-4);
  CHECK(s.beta(1000) == doctest::Approx(0.02).epsilon(1e-15));
}

TEST_CASE("single step schedule") {
  const auto s = build_schedule(1, 0.5, 0.5);
  CHECK(s.beta(1) == 0.5);
  CHECK(s.alpha(1) == 0.5);
  CHECK(s.alpha_bar(1) == 0.5);
  CHECK(s.sigma(1) == std::sqrt(0.5));
}

TEST_CASE("three step alpha bar") {
  const auto s = build_schedule(3, 0.1, 0.3);
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-14));
  CHECK(s.alpha_bar(2) == doctest::Approx(0.72).epsilon(1e-14));
  CHECK(s.alpha_bar(3) == doctest::Approx(0.504).epsilon(1e-14));
}

TEST_CASE("schedule invariants hold on random configs") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(1e-5, 0.2);
  std::uniform_int_distribution<int> steps(1, 2000);
  for (int trial = 0; trial < 50; ++trial) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    const auto s = build_schedule(steps(rng), a, b);
    CHECK(s.alpha_bar(1) == s.alpha(1));
    for (int t = 1; t <= s.steps(); ++t) {
      REQUIRE(s.beta(t) > 0.0);
      REQUIRE(s.beta(t) < 1.0);
      REQUIRE(s.alpha(t) == 1.0 - s.beta(t));
      REQUIRE(s.sigma(t) * s.sigma(t) == doctest::Approx(s.beta(t)).epsilon(1e-15));
      if (t > 1) REQUIRE(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
  }
}

TEST_CASE("schedule rejects invalid ranges") {
  CHECK(kind_of([] { build_schedule(0, 1e-4, 0.02); }) == ErrorKind::parameter);
  CHECK(kind_of([] { build_schedule(10, 0.0, 0.02); }) == ErrorKind::parameter);
  CHECK(kind_of([] { build_schedule(10, 0.03, 0.02); }) == ErrorKind::parameter);
  CHECK(kind_of([] { build_schedule(10, 1e-4, 1.0); }) == ErrorKind::parameter);
  CHECK(kind_of([] { build_schedule(5000, 0.5, 0.9); }) == ErrorKind::parameter);
  const auto s = build_schedule(10, 1e-4, 0.02);
  CHECK_THROWS_AS(s.beta(0), Error);
  CHECK_THROWS_AS(s.beta(11), Error);
}

TEST_CASE("forward noise closed form") {
  const auto s = build_schedule(3, 0.1, 0.3);
  const MatrixXd x0 = col({1.0, -2.0});
  CHECK(forward_noise(x0, 2, MatrixXd::Zero(2, 1), s).isApprox(std::sqrt(0.72) * x0));
  const MatrixXd e = col({0.5, 0.25});
  CHECK(forward_noise(MatrixXd::Zero(2, 1), 2, e, s).isApprox(std::sqrt(1.0 - 0.72) * e));
  const MatrixXd y = forward_noise(col({1.0}), 3, col({1.0}), s);
  CHECK(y(0, 0) == doctest::Approx(std::sqrt(0.504) + std::sqrt(0.496)).epsilon(1e-14));
  CHECK(y(0, 0) == doctest::Approx(1.4142).epsilon(1e-4));
  CHECK(kind_of([&] { forward_noise(x0, 1, col({1.0}), s); }) == ErrorKind::shape);
}

TEST_CASE("forward noise marginal matches its Gaussian law") {
  const auto s = build_schedule(1000, 1e-4, 0.02);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> pick(1, 1000);
  const int n = 100000;
  for (int trial = 0; trial < 4; ++trial) {
    const int tau = pick(rng);
    const MatrixXd x0 = col({0.7, -1.3});
    MatrixXd eps(2, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      eps(0, j) = normal(rng);
      eps(1, j) = normal(rng);
    }
    const MatrixXd y = forward_noise(x0.replicate(1, n), tau, eps, s);
    const double var = 1.0 - s.alpha_bar(tau);
    for (Eigen::Index i = 0; i < 2; ++i) {
      const double mean = y.row(i).mean();
      const double emp_var = (y.row(i).array() - mean).square().sum() / (n - 1);
      CHECK(std::abs(mean - std::sqrt(s.alpha_bar(tau)) * x0(i, 0)) < 3.0 * std::sqrt(var / n));
      CHECK(std::abs(emp_var - var) < 3.0 * var * std::sqrt(2.0 / (n - 1)));
    }
  }
}

TEST_CASE("reverse step inverts a single step exactly") {
  const auto s = build_schedule(1, 0.3, 0.3);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const MatrixXd x0 = col({normal(rng), normal(rng), normal(rng)});
    const MatrixXd eps = col({normal(rng), normal(rng), normal(rng)});
    const MatrixXd back = reverse_step(forward_noise(x0, 1, eps, s), eps, 1, s);
    CHECK((back - x0).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + x0.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("reverse step with zero noise is a rescaling") {
  const auto s = build_schedule(10, 1e-3, 0.2);
  const MatrixXd x = col({2.0, -1.0});
  const MatrixXd out = reverse_step(x, MatrixXd::Zero(2, 1), 7, s, MatrixXd::Zero(2, 1));
  CHECK(out.isApprox(x / std::sqrt(s.alpha(7))));
}

TEST_CASE("reverse step noise contract") {
  const auto s = build_schedule(10, 1e-3, 0.2);
  const MatrixXd x = col({1.0});
  CHECK(kind_of([&] { reverse_step(x, x, 1, s, x); }) == ErrorKind::contract);
  CHECK(kind_of([&] { reverse_step(x, x, 2, s); }) == ErrorKind::contract);
  CHECK(kind_of([&] { reverse_step(x, col({1.0, 2.0}), 2, s, x); }) == ErrorKind::shape);
}

TEST_CASE("reverse chain with exact Gaussian noise predictor reaches the target") {
  // For x0 ~ N(m, v) the optimal predictor is E[eps | x_tau] in closed form.
  const auto s = build_schedule(1000, 1e-4, 0.02);
  const double m = 1.5, v = 0.25;
  const int n = 10000;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal;
  auto draw = [&] {
    MatrixXd z(1, n);
    for (Eigen::Index j = 0; j < n; ++j) z(0, j) = normal(rng);
    return z;
  };
  MatrixXd x = draw();
  for (int tau = s.steps(); tau >= 1; --tau) {
    const double ab = s.alpha_bar(tau);
    const MatrixXd eps_hat =
        (std::sqrt(1.0 - ab) / (ab * v + 1.0 - ab)) * (x.array() - std::sqrt(ab) * m).matrix();
    x = tau > 1 ? reverse_step(x, eps_hat, tau, s, draw()) : reverse_step(x, eps_hat, tau, s);
  }
  const double mean = x.mean();
  const double var = (x.array() - mean).square().sum() / (n - 1);
  CHECK(std::abs(mean - m) < 4.0 * std::sqrt(v / n));
  CHECK(std::abs(var - v) < 0.05 * v);
}

TEST_CASE("noise prediction loss") {
  CHECK(noise_prediction_loss(col({0.3, 0.1}), col({0.3, 0.1})) == 0.0);
  CHECK(noise_prediction_loss(col({1.0, 0.0}), col({0.0, 0.0})) == 1.0);
  CHECK(noise_prediction_loss(col({0.3, -0.4}), col({0.0, 0.0})) == doctest::Approx(0.25).epsilon(1e-15));
  MatrixXd a(2, 2), b = MatrixXd::Zero(2, 2);
  a << 1.0, 0.3, 0.0, -0.4;
  CHECK(noise_prediction_loss(a, b) == doctest::Approx(0.625));
  CHECK(kind_of([] { noise_prediction_loss(col({1.0}), col({1.0, 2.0})); }) == ErrorKind::shape);
}

TEST_CASE("diffusion ops are deterministic") {
  const auto s = build_schedule(50, 1e-3, 0.1);
  const MatrixXd x = col({0.1, 0.2}), e = col({-0.3, 0.4});
  CHECK(forward_noise(x, 17, e, s) == forward_noise(x, 17, e, s));
  CHECK(reverse_step(x, e, 17, s, e) == reverse_step(x, e, 17, s, e));
}
