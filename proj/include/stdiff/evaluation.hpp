#pragma once

#include "stdiff/masking.hpp"
#include "stdiff/table.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace stdiff {

struct ChannelMetrics {
  std::string channel;
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
};

struct MetricsReport {
  std::string method;
  int level = 0;
  std::uint64_t seed = 0;
  std::vector<ChannelMetrics> channels;  // one per state channel
};

/// MAE and RMSE over the ledger's state-channel entries only. Errors are in the
/// table's units, or divided by the channel scale when `z_space` is given.
MetricsReport masked_mae_rmse(const TimeSeriesTable& imputed, const std::vector<LedgerEntry>& ledger,
                              const ZScoreStats* z_space = nullptr);

/// One line of a curve file: `method,level,seed,channel,mae,rmse`.
struct CurveRow {
  std::string method;
  int level = 0;
  std::uint64_t seed = 0;
  std::string channel;
  double mae = 0.0;
  double rmse = 0.0;

  bool operator==(const CurveRow&) const = default;
};

std::vector<CurveRow> curve_rows(const MetricsReport& report);
void write_curve_rows(std::ostream& out, const std::vector<CurveRow>& rows);
std::vector<CurveRow> read_curve_rows(std::istream& in);

/// Mean and sample standard deviation over seeds for one method/level/channel.
struct CurvePoint {
  std::string method;
  int level = 0;
  std::string channel;
  double mae_mean = 0.0;
  double mae_std = 0.0;
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
  std::size_t seeds = 0;
};

std::vector<CurvePoint> summarize_curve(const std::vector<CurveRow>& rows);
void write_curve_summary(std::ostream& out, const std::vector<CurvePoint>& points);
/// Standalone SVG: one MAE-versus-level panel per channel, a line per method
/// with one-standard-deviation whiskers.
std::string render_degradation_svg(const std::vector<CurvePoint>& points);
/// Plain-text table per channel: an MAE block and an RMSE block, methods as
/// rows and levels as columns.
std::string format_summary_table(const std::vector<CurvePoint>& points);

struct ImputationMethod {
  std::string name;
  std::function<TimeSeriesTable(const TimeSeriesTable& masked, std::uint64_t seed)> impute;
};

struct DegradationResult {
  std::vector<CurveRow> rows;
  std::vector<CurvePoint> summary;
};

/// For every seed and level: mask the ground-truth table with the level's
/// scenario plan, run each method, and score it on the hidden state entries.
DegradationResult degradation_curve(std::span<const ImputationMethod> methods, std::span<const int> levels,
                                    std::span<const std::uint64_t> seeds,
                                    const std::function<TimeSeriesTable(std::uint64_t seed)>& ground_truth,
                                    const MaskPlan& plan_template = {});

}  // namespace stdiff
