#include <doctest.h>

#include "stdiff/baselines.hpp"
#include "stdiff/errors.hpp"
#include "stdiff/evaluation.hpp"
#include "stdiff/plant.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace stdiff;

namespace {

TimeSeriesTable nonlinear_plant(std::size_t length, std::uint64_t seed) {
  auto cfg = PlantConfig::nonlinear_default();
  cfg.length = length;
  cfg.seed = seed;
  return simulate_plant(cfg).table;
}

// Straight loop over the ledger, kept separate from the library pass.
std::pair<double, double> reference_metrics(const TimeSeriesTable& imputed, const std::vector<LedgerEntry>& ledger,
                                            int channel) {
  double abs_sum = 0.0, sq_sum = 0.0, n = 0.0;
  for (const auto& e : ledger) {
    if (e.channel != channel) continue;
    const double d = imputed.values()(static_cast<Eigen::Index>(e.row), channel) - e.true_value;
    abs_sum += std::fabs(d);
    sq_sum += d * d;
    n += 1.0;
  }
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

}  // namespace

TEST_CASE("hand computed metrics") {
  Eigen::MatrixXd v(3, 2);
  v << 1.0, 0.0, 5.0, 0.0, 2.0, 0.0;
  const TimeSeriesTable t({"0", "1", "2"}, {{"x", ChannelRole::state}, {"u", ChannelRole::control}}, v);
  const std::vector<LedgerEntry> ledger = {{0, 0, 0.0}, {1, 0, 2.0}, {2, 1, 100.0}};
  const auto report = masked_mae_rmse(t, ledger);
  REQUIRE(report.channels.size() == 1);
  CHECK(report.channels[0].channel == "x");
  CHECK(report.channels[0].count == 2);
  CHECK(report.channels[0].mae == 2.0);
  CHECK(report.channels[0].rmse == doctest::Approx(std::sqrt(5.0)).epsilon(1e-15));

  const std::vector<LedgerEntry> exact = {{0, 0, 1.0}, {1, 0, 5.0}};
  const auto perfect = masked_mae_rmse(t, exact);
  CHECK(perfect.channels[0].mae == 0.0);
  CHECK(perfect.channels[0].rmse == 0.0);

  ZScoreStats stats{{"x", "u"}, {0.0, 0.0}, {2.0, 1.0}};
  CHECK(masked_mae_rmse(t, ledger, &stats).channels[0].mae == 1.0);
}

TEST_CASE("missing imputation at a ledger entry is a coverage error") {
  Eigen::MatrixXd v(2, 1);
  v << 1.0, kMissing;
  const TimeSeriesTable t({"0", "1"}, {{"x", ChannelRole::state}}, v);
  try {
    masked_mae_rmse(t, {{1, 0, 3.0}});
    FAIL("expected an Error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::coverage);
  }
}

TEST_CASE("metrics agree with an independent pass and ignore unmasked entries") {
  const auto full = nonlinear_plant(3000, 1);
  const auto masked = generate_block_masks(full, MaskPlan::scenario(40, 2));
  const auto imputed = baseline_linear_interp(masked.masked);
  const auto report = masked_mae_rmse(imputed, masked.ledger);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto [mae, rmse] = reference_metrics(imputed, masked.ledger, static_cast<int>(i));
    CHECK(std::abs(report.channels[i].mae - mae) <= 1e-12);
    CHECK(std::abs(report.channels[i].rmse - rmse) <= 1e-12);
    CHECK(report.channels[i].rmse >= report.channels[i].mae);
    CHECK(report.channels[i].mae >= 0.0);
  }

  Eigen::MatrixXd v = imputed.values();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 50.0);
  for (std::size_t r = 0; r < full.length(); ++r) {
    for (std::size_t c = 0; c < full.channel_count(); ++c) {
      if (masked.masked.observed(r, c)) v(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) += normal(rng);
    }
  }
  const auto perturbed = masked_mae_rmse(imputed.with_values(v), masked.ledger);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(perturbed.channels[i].mae == report.channels[i].mae);
    CHECK(perturbed.channels[i].rmse == report.channels[i].rmse);
  }
}

TEST_CASE("rmse equals mae only for equal absolute errors") {
  Eigen::MatrixXd v(3, 1);
  v << 1.0, -1.0, 1.0;
  const TimeSeriesTable t({"0", "1", "2"}, {{"x", ChannelRole::state}}, v);
  const auto equal = masked_mae_rmse(t, {{0, 0, 0.0}, {1, 0, 0.0}, {2, 0, 2.0}});
  CHECK(equal.channels[0].rmse == equal.channels[0].mae);
  const auto unequal = masked_mae_rmse(t, {{0, 0, 0.0}, {1, 0, 0.5}});
  CHECK(unequal.channels[0].rmse > unequal.channels[0].mae);
}

TEST_CASE("curve rows round trip and summarize") {
  std::vector<CurveRow> rows = {{"locf", 20, 1, "x1", 1.0, 2.0},
                                {"locf", 20, 2, "x1", 3.0, 4.0},
                                {"linear", 20, 1, "x1", 0.5, 0.75},
                                {"locf", 50, 1, "x1", 0.1 + 0.2, 1e-17}};
  std::ostringstream out;
  write_curve_rows(out, rows);
  CHECK(out.str().rfind("method,level,seed,channel,mae,rmse\n", 0) == 0);
  std::istringstream in(out.str());
  CHECK(read_curve_rows(in) == rows);

  const auto points = summarize_curve(rows);
  REQUIRE(points.size() == 3);
  CHECK(points[0].method == "locf");
  CHECK(points[0].level == 20);
  CHECK(points[0].mae_mean == 2.0);
  CHECK(points[0].mae_std == doctest::Approx(std::sqrt(2.0)));
  CHECK(points[0].seeds == 2);
  CHECK(points[1].level == 50);
  CHECK(points[1].mae_std == 0.0);
  CHECK(points[2].method == "linear");

  std::istringstream bad("locf,20,x,x1,1,2\n");
  CHECK_THROWS_AS(read_curve_rows(bad), Error);
}

TEST_CASE("single point curve still renders") {
  const std::vector<CurvePoint> one = {{"locf", 20, "x1", 0.4, 0.0, 0.5, 0.0, 1}};
  const std::string svg = render_degradation_svg(one);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("nan") == std::string::npos);
  CHECK(svg.find("locf") != std::string::npos);
  const std::string table = format_summary_table(one);
  CHECK(table.find("0.4000") != std::string::npos);
  CHECK(table.find("20%") != std::string::npos);
}

TEST_CASE("degradation curve over baselines") {
  const std::vector<ImputationMethod> methods = {
      {"locf", [](const TimeSeriesTable& t, std::uint64_t) { return baseline_locf(t); }},
      {"linear", [](const TimeSeriesTable& t, std::uint64_t) { return baseline_linear_interp(t); }}};
  const int levels[] = {20, 50};
  const std::uint64_t seeds[] = {1, 2, 3};
  const auto truth = [](std::uint64_t seed) { return nonlinear_plant(3000, seed); };
  const auto a = degradation_curve(methods, levels, seeds, truth);
  CHECK(a.rows.size() == 2 * 2 * 3 * 2);
  CHECK(a.summary.size() == 2 * 2 * 2);
  const auto b = degradation_curve(methods, levels, seeds, truth);
  std::ostringstream fa, fb;
  write_curve_rows(fa, a.rows);
  write_curve_rows(fb, b.rows);
  CHECK(fa.str() == fb.str());
  for (const auto& p : a.summary) CHECK(p.rmse_mean >= p.mae_mean);
  CHECK_THROWS_AS(degradation_curve(methods, levels, std::span<const std::uint64_t>(), truth), Error);
}
