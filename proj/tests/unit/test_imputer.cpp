#include <doctest.h>

#include "stdiff/errors.hpp"
#include "stdiff/imputer.hpp"
#include "stdiff/masking.hpp"
#include "stdiff/plant.hpp"

#include <cmath>
#include <sstream>

using namespace stdiff;
using Eigen::MatrixXd;

namespace {

// Predicts the exact noise that lands every chain on `target` at tau = 1.
class ConstantTargetPredictor final : public NoisePredictor {
 public:
  ConstantTargetPredictor(const NoiseSchedule& s, double target, int dim) : s_(s), target_(target), dim_(dim) {}
  int state_dim() const override { return dim_; }
  void bind_context(const MatrixXd& features) override { last_features = features; }
  MatrixXd predict(const MatrixXd& x, int tau) override {
    const double ab = s_.alpha_bar(tau);
    return ((x.array() - std::sqrt(ab) * target_) / std::sqrt(1.0 - ab)).matrix();
  }
  MatrixXd last_features;

 private:
  const NoiseSchedule& s_;
  double target_;
  int dim_;
};

ModelDims tiny_sizes() {
  ModelDims d;
  d.time_embed_dim = 8;
  d.context_dim = 8;
  d.encoder_width = 8;
  d.predictor_width = 16;
  d.predictor_blocks = 2;
  return d;
}

TimeSeriesTable nonlinear_plant(std::size_t length, std::uint64_t seed) {
  auto cfg = PlantConfig::nonlinear_default();
  cfg.length = length;
  cfg.seed = seed;
  return simulate_plant(cfg).table;
}

Checkpoint untrained_checkpoint(const TimeSeriesTable& table, int steps = 20) {
  return {init_params(1, data_dims(table, tiny_sizes())), ScheduleConfig{steps, 1e-3, 0.3}, zscore_fit(table),
          table.channels()};
}

// Independent run-length scan over the "any state missing" indicator.
std::pair<std::size_t, std::size_t> rle_runs(const TimeSeriesTable& t) {
  std::size_t runs = 0, total = 0;
  bool previous = false;
  for (std::size_t r = 0; r < t.length(); ++r) {
    bool missing = false;
    for (const int c : t.state_channels()) missing = missing || std::isnan(t.values()(static_cast<Eigen::Index>(r), c));
    if (missing && !previous) ++runs;
    total += missing ? 1 : 0;
    previous = missing;
  }
  return {runs, total};
}

}  // namespace

TEST_CASE("gap detection") {
  const auto full = nonlinear_plant(100, 1);
  CHECK(find_gaps(full).empty());

  Eigen::MatrixXd v = full.values();
  v(40, 1) = kMissing;
  const auto single = find_gaps(full.with_values(v));
  REQUIRE(single.size() == 1);
  CHECK(single[0].anchor == std::optional<std::size_t>(39));
  CHECK(single[0].start == 40);
  CHECK(single[0].horizon == 1);
  CHECK(single[0].channels == std::vector<int>{1});

  v(0, 0) = kMissing;
  v(1, 0) = kMissing;
  v(41, 0) = kMissing;
  const auto gaps = find_gaps(full.with_values(v));
  REQUIRE(gaps.size() == 2);
  CHECK_FALSE(gaps[0].anchorable());
  CHECK(gaps[0].horizon == 2);
  CHECK(gaps[1].horizon == 2);
  CHECK(gaps[1].channels == std::vector<int>{0, 1});
}

TEST_CASE("gap count and length match a run-length scan") {
  const auto full = nonlinear_plant(6000, 2);
  for (const std::uint64_t seed : {1u, 2u, 3u}) {
    const auto masked = generate_block_masks(full, MaskPlan::scenario(50, seed)).masked;
    const auto gaps = find_gaps(masked);
    std::size_t total = 0;
    for (const auto& g : gaps) {
      total += g.horizon;
      if (g.anchor) CHECK(*g.anchor + 1 == g.start);
    }
    const auto [runs, rle_total] = rle_runs(masked);
    CHECK(gaps.size() == runs);
    CHECK(total == rle_total);
  }
}

TEST_CASE("recursion with a constant-target stub reproduces the constant") {
  const auto table = zscore_apply(nonlinear_plant(50, 3), zscore_fit(nonlinear_plant(50, 3)));
  Eigen::MatrixXd v = table.values();
  for (Eigen::Index r = 10; r < 15; ++r) v(r, 0) = v(r, 1) = kMissing;
  const auto masked = table.with_values(v);
  const auto schedule = build_schedule(50, 1e-3, 0.3);
  ConstantTargetPredictor stub(schedule, 0.75, 2);
  const auto gaps = find_gaps(masked);
  REQUIRE(gaps.size() == 1);
  const auto result = impute_gap(gaps[0], masked, stub, schedule, 3, 5);
  CHECK(result.point_estimate.cols() == 5);
  for (const auto& s : result.samples) CHECK((s.array() - 0.75).abs().maxCoeff() < 1e-10);
  CHECK(stub.last_features.topRows(2).isApproxToConstant(0.75, 1e-10));
}

TEST_CASE("each step runs one full reverse chain for all samples") {
  const auto table = nonlinear_plant(80, 4);
  const auto ck = untrained_checkpoint(table, 25);
  Eigen::MatrixXd v = table.values();
  for (Eigen::Index r = 30; r < 37; ++r) v(r, 0) = kMissing;
  const auto norm = zscore_apply(table.with_values(v), ck.stats);
  const NoiseSchedule schedule(ck.schedule);
  ModelPredictor model(ck.params, schedule.steps());
  CountingPredictor counter(model);
  const auto result = impute_gap(find_gaps(norm)[0], norm, counter, schedule, 4, 1);
  CHECK(counter.calls() == 7u * 25u);
  CHECK(counter.evaluations() == 7u * 25u * 4u);
  CHECK(result.sample_count() == 4);
}

TEST_CASE("sampling is seeded and samples differ") {
  const auto table = nonlinear_plant(60, 5);
  const auto ck = untrained_checkpoint(table);
  Eigen::MatrixXd v = table.values();
  for (Eigen::Index r = 20; r < 26; ++r) v(r, 0) = v(r, 1) = kMissing;
  const auto norm = zscore_apply(table.with_values(v), ck.stats);
  const NoiseSchedule schedule(ck.schedule);
  const auto gap = find_gaps(norm)[0];
  const auto a = impute_gap(gap, norm, ck.params, schedule, 2, 77);
  const auto b = impute_gap(gap, norm, ck.params, schedule, 2, 77);
  CHECK(a.samples == b.samples);
  CHECK_FALSE(a.samples[0] == a.samples[1]);
  CHECK_FALSE(impute_gap(gap, norm, ck.params, schedule, 2, 78).samples == a.samples);
  MatrixXd mean = (a.samples[0] + a.samples[1]) / 2.0;
  CHECK(a.point_estimate.isApprox(mean, 1e-14));
  for (const auto& s : a.samples) CHECK(s.allFinite());
}

TEST_CASE("imputed states never look at later covariates") {
  const auto table = nonlinear_plant(60, 6);
  const auto ck = untrained_checkpoint(table);
  Eigen::MatrixXd v = table.values();
  for (Eigen::Index r = 20; r < 30; ++r) v(r, 0) = v(r, 1) = kMissing;
  const auto norm = zscore_apply(table.with_values(v), ck.stats);
  const NoiseSchedule schedule(ck.schedule);
  const auto gap = find_gaps(norm)[0];
  const auto base = impute_gap(gap, norm, ck.params, schedule, 3, 9);
  for (const Eigen::Index h : {0, 4, 8}) {
    Eigen::MatrixXd changed = norm.values();
    for (Eigen::Index r = 20 + h + 1; r < 60; ++r) changed.row(r).tail(4).array() += 3.0;
    const auto other = impute_gap(gap, norm.with_values(changed), ck.params, schedule, 3, 9);
    for (std::size_t s = 0; s < 3; ++s) {
      CHECK(other.samples[s].leftCols(h + 1) == base.samples[s].leftCols(h + 1));
      CHECK_FALSE(other.samples[s].col(h + 1) == base.samples[s].col(h + 1));
    }
  }
}

TEST_CASE("history-only mode hides every covariate") {
  const auto table = nonlinear_plant(40, 7);
  const auto norm = zscore_apply(table, zscore_fit(table));
  Eigen::MatrixXd v = norm.values();
  v(20, 0) = v(20, 1) = kMissing;
  const auto masked = norm.with_values(v);
  const auto schedule = build_schedule(10, 1e-3, 0.3);
  ConstantTargetPredictor stub(schedule, 0.0, 2);
  const auto gap = find_gaps(masked)[0];
  impute_gap(gap, masked, stub, schedule, 2, 1, ImputeMode::history_only);
  CHECK(stub.last_features.bottomRows(8).isZero());
  impute_gap(gap, masked, stub, schedule, 2, 1, ImputeMode::full);
  CHECK(stub.last_features.bottomRows(4).isOnes());
  CHECK(stub.last_features(2, 0) == masked.value(20, 2));
}

TEST_CASE("observed state entries inside a partial gap are kept") {
  const auto table = zscore_apply(nonlinear_plant(40, 8), zscore_fit(nonlinear_plant(40, 8)));
  Eigen::MatrixXd v = table.values();
  for (Eigen::Index r = 10; r < 14; ++r) v(r, 0) = kMissing;
  const auto masked = table.with_values(v);
  const auto schedule = build_schedule(10, 1e-3, 0.3);
  ConstantTargetPredictor stub(schedule, 5.0, 2);
  const auto result = impute_gap(find_gaps(masked)[0], masked, stub, schedule, 2, 3);
  for (Eigen::Index h = 0; h < 4; ++h) {
    CHECK(result.point_estimate(1, h) == masked.value(static_cast<std::size_t>(10 + h), 1));
    CHECK(result.point_estimate(0, h) == doctest::Approx(5.0));
  }
}

TEST_CASE("series imputation preserves observed entries") {
  const auto full = nonlinear_plant(400, 9);
  const auto ck = untrained_checkpoint(full);
  const auto same = impute_series(full, ck, {});
  CHECK(same.completed == full);
  CHECK(same.gaps.empty());

  const auto masked = generate_block_masks(full, MaskPlan::scenario(30, 4)).masked;
  ImputeOptions opt;
  opt.samples = 3;
  opt.seed = 4;
  const auto out = impute_series(masked, ck, opt);
  for (std::size_t r = 0; r < masked.length(); ++r) {
    for (std::size_t c = 0; c < masked.channel_count(); ++c) {
      if (masked.observed(r, c)) REQUIRE(out.completed.value(r, c) == masked.value(r, c));
    }
  }
  for (const auto& g : out.gaps) {
    if (!g.gap.anchorable()) continue;
    for (std::size_t r = g.gap.start; r < g.gap.start + g.gap.horizon; ++r) CHECK(out.completed.observed(r, 0));
  }
  for (const int c : masked.covariate_channels()) {
    for (std::size_t r = 0; r < masked.length(); ++r) {
      CHECK(out.completed.observed(r, static_cast<std::size_t>(c)) == masked.observed(r, static_cast<std::size_t>(c)));
    }
  }
}

TEST_CASE("threads do not change the result") {
  const auto full = nonlinear_plant(500, 10);
  const auto ck = untrained_checkpoint(full);
  const auto masked = generate_block_masks(full, MaskPlan::scenario(40, 2)).masked;
  ImputeOptions opt;
  opt.samples = 2;
  opt.seed = 8;
  const auto one = impute_series(masked, ck, opt);
  opt.threads = 3;
  const auto three = impute_series(masked, ck, opt);
  CHECK(one.completed == three.completed);
}

TEST_CASE("gaps at the series start") {
  const auto full = nonlinear_plant(60, 11);
  const auto ck = untrained_checkpoint(full);
  Eigen::MatrixXd v = full.values();
  v(0, 0) = v(1, 0) = kMissing;
  const auto masked = full.with_values(v);
  const auto strict = impute_series(masked, ck, {});
  REQUIRE(strict.gaps.size() == 1);
  CHECK_FALSE(strict.gaps[0].result.has_value());
  CHECK_FALSE(strict.completed.observed(0, 0));
  ImputeOptions opt;
  opt.fill_unanchorable = true;
  const auto filled = impute_series(masked, ck, opt);
  CHECK(filled.completed.value(0, 0) == full.value(2, 0));
  CHECK(filled.completed.value(1, 0) == full.value(2, 0));
}

TEST_CASE("mismatched checkpoint dims name both sides") {
  const auto table = nonlinear_plant(50, 12);
  auto scalar = PlantConfig::scalar(0.9, 1.0, 0.1);
  scalar.length = 50;
  const auto other = simulate_plant(scalar).table;
  try {
    impute_series(table, untrained_checkpoint(other), {});
    FAIL("expected an Error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
    const std::string msg = e.what();
    CHECK(msg.find("(D_x=1, D_u=1, D_w=1)") != std::string::npos);
    CHECK(msg.find("(D_x=2, D_u=2, D_w=2)") != std::string::npos);
  }
}

TEST_CASE("covariate fallbacks fill only covariates") {
  const auto full = nonlinear_plant(300, 13);
  const auto masked = zscore_apply(generate_block_masks(full, MaskPlan::scenario(50, 1)).masked, zscore_fit(full));
  for (const auto fb : {CovariateFallback::locf_decay, CovariateFallback::linear, CovariateFallback::kalman}) {
    const auto filled = fill_covariates(masked, fb);
    for (std::size_t r = 0; r < masked.length(); ++r) {
      for (const int c : masked.covariate_channels()) CHECK(filled.observed(r, static_cast<std::size_t>(c)));
      CHECK(filled.observed(r, 0) == masked.observed(r, 0));
    }
  }
  CHECK(fill_covariates(masked, CovariateFallback::mask_zero) == masked);
  CHECK(parse_covariate_fallback("locf") == CovariateFallback::locf_decay);
  CHECK(parse_covariate_fallback("mask-zero") == CovariateFallback::mask_zero);
  CHECK(parse_impute_mode("history-only") == ImputeMode::history_only);
  CHECK_THROWS_AS(parse_impute_mode("partial"), Error);
}

TEST_CASE("gap report lists each gap channel") {
  const auto full = nonlinear_plant(120, 14);
  const auto ck = untrained_checkpoint(full);
  Eigen::MatrixXd v = full.values();
  for (Eigen::Index r = 50; r < 53; ++r) v(r, 1) = kMissing;
  const auto masked = full.with_values(v);
  const auto out = impute_series(masked, ck, {});
  std::vector<LedgerEntry> ledger;
  for (std::size_t r = 50; r < 53; ++r) ledger.push_back({r, 1, full.value(r, 1)});
  std::ostringstream report;
  write_gap_report(report, masked, out, &ledger);
  std::istringstream lines(report.str());
  std::string header, row;
  std::getline(lines, header);
  std::getline(lines, row);
  CHECK(header == "gap_id,anchor,start,horizon,status,channel,mae");
  CHECK(row.rfind("0,49,50,3,imputed,x2,", 0) == 0);
  double mae = 0.0;
  for (std::size_t r = 50; r < 53; ++r) mae += std::abs(out.completed.value(r, 1) - full.value(r, 1)) / 3.0;
  CHECK(std::stod(row.substr(row.rfind(',') + 1)) == doctest::Approx(mae));
}

TEST_CASE("gap seeds depend on the run seed and the start row") {
  CHECK(gap_seed(1, 10) == gap_seed(1, 10));
  CHECK(gap_seed(1, 10) != gap_seed(1, 11));
  CHECK(gap_seed(1, 10) != gap_seed(2, 10));
}
