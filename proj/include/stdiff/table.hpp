#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stdiff {

enum class ChannelRole { state, control, exogenous };

std::string_view to_string(ChannelRole role);
ChannelRole parse_role(std::string_view text);

struct Channel {
  std::string name;
  ChannelRole role;

  bool operator==(const Channel&) const = default;
};

using RoleMap = std::map<std::string, ChannelRole, std::less<>>;

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// A regularly sampled multivariate series. Missing entries are NaN, so the
/// observation mask and the value matrix cannot disagree. Rows are time steps,
/// columns are channels. Tables are values: transforms return new tables.
class TimeSeriesTable {
 public:
  TimeSeriesTable() = default;
  TimeSeriesTable(std::vector<std::string> timestamps, std::vector<Channel> channels,
                  Eigen::MatrixXd values);

  std::size_t length() const noexcept { return timestamps_.size(); }
  std::size_t channel_count() const noexcept { return channels_.size(); }

  const std::vector<std::string>& timestamps() const noexcept { return timestamps_; }
  const std::vector<Channel>& channels() const noexcept { return channels_; }
  const Eigen::MatrixXd& values() const noexcept { return values_; }

  double value(std::size_t row, std::size_t channel) const { return values_(row, channel); }
  bool observed(std::size_t row, std::size_t channel) const {
    return !std::isnan(values_(row, channel));
  }
  /// 1 where observed, 0 where missing.
  Eigen::MatrixXi mask() const;

  std::vector<int> channels_with_role(ChannelRole role) const;
  std::vector<int> state_channels() const { return channels_with_role(ChannelRole::state); }
  /// Controls first, then exogenous channels, each in column order.
  std::vector<int> covariate_channels() const;
  std::optional<int> find_channel(std::string_view name) const;
  std::optional<std::size_t> find_row(std::string_view timestamp) const;

  /// Same grid and channels with new values.
  TimeSeriesTable with_values(Eigen::MatrixXd values) const;

  bool operator==(const TimeSeriesTable& other) const;

 private:
  std::vector<std::string> timestamps_;
  std::vector<Channel> channels_;
  Eigen::MatrixXd values_;
};

/// Parses a timestamp cell: integer step or ISO-8601 (`YYYY-MM-DD[T ]hh:mm[:ss[.fff]][Z]`).
/// Returns seconds since epoch for dates, the step itself for integers.
double parse_timestamp(std::string_view text);

RoleMap read_roles(std::istream& in);
RoleMap load_roles(const std::string& path);
void write_roles(std::ostream& out, const TimeSeriesTable& table);
void save_roles(const std::string& path, const TimeSeriesTable& table);

/// CSV with a leading `timestamp` column; empty cells are missing. Columns not in
/// the role map are dropped with a warning; role-map names absent from the header
/// are a config error.
TimeSeriesTable read_csv(std::istream& in, const RoleMap& roles);
TimeSeriesTable load_csv(const std::string& path, const RoleMap& roles);
void write_csv(std::ostream& out, const TimeSeriesTable& table);
void save_csv(const std::string& path, const TimeSeriesTable& table);

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);

struct ZScoreStats {
  std::vector<std::string> channels;
  std::vector<double> mean;
  std::vector<double> scale;

  bool operator==(const ZScoreStats&) const = default;
};

/// Fits per-channel mean and population standard deviation over observed entries.
ZScoreStats zscore_fit(const TimeSeriesTable& table);
TimeSeriesTable zscore_apply(const TimeSeriesTable& table, const ZScoreStats& stats);
TimeSeriesTable zscore_invert(const TimeSeriesTable& table, const ZScoreStats& stats);

/// Fraction of missing entries per channel.
std::vector<double> missing_rates(const TimeSeriesTable& table);

}  // namespace stdiff
