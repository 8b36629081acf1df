#include "stdiff/table.hpp"

#include "stdiff/errors.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/core.h>

namespace stdiff {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return cells;
}

std::optional<double> parse_number(std::string_view text) {
  double value = 0.0;
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

int parse_int_field(std::string_view text, std::string_view whole) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorKind::ingestion, fmt::format("bad timestamp '{}'", whole));
  }
  return value;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, fmt::format("cannot open '{}'", path));
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, fmt::format("cannot write '{}'", path));
  return out;
}

}  // namespace

std::string_view to_string(ChannelRole role) {
  switch (role) {
    case ChannelRole::state: return "state";
    case ChannelRole::control: return "control";
    case ChannelRole::exogenous: return "exogenous";
  }
  return "state";
}

ChannelRole parse_role(std::string_view text) {
  if (text == "state") return ChannelRole::state;
  if (text == "control") return ChannelRole::control;
  if (text == "exogenous") return ChannelRole::exogenous;
  throw Error(ErrorKind::config, fmt::format("unknown channel role '{}'", text));
}

TimeSeriesTable::TimeSeriesTable(std::vector<std::string> timestamps, std::vector<Channel> channels,
                                 Eigen::MatrixXd values)
    : timestamps_(std::move(timestamps)), channels_(std::move(channels)), values_(std::move(values)) {
  if (values_.rows() != static_cast<Eigen::Index>(timestamps_.size()) ||
      values_.cols() != static_cast<Eigen::Index>(channels_.size())) {
    throw Error(ErrorKind::shape,
                fmt::format("table values are {}x{} but grid is {}x{}", values_.rows(),
                            values_.cols(), timestamps_.size(), channels_.size()));
  }
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    if (std::isinf(values_.data()[i])) {
      throw Error(ErrorKind::ingestion, "table values must be finite or missing");
    }
  }
}

Eigen::MatrixXi TimeSeriesTable::mask() const {
  return values_.array().isNaN().select(Eigen::MatrixXi::Zero(values_.rows(), values_.cols()),
                                        Eigen::MatrixXi::Ones(values_.rows(), values_.cols()));
}

std::vector<int> TimeSeriesTable::channels_with_role(ChannelRole role) const {
  std::vector<int> out;
  for (std::size_t c = 0; c < channels_.size(); ++c) {
    if (channels_[c].role == role) out.push_back(static_cast<int>(c));
  }
  return out;
}

std::vector<int> TimeSeriesTable::covariate_channels() const {
  auto out = channels_with_role(ChannelRole::control);
  const auto exo = channels_with_role(ChannelRole::exogenous);
  out.insert(out.end(), exo.begin(), exo.end());
  return out;
}

std::optional<int> TimeSeriesTable::find_channel(std::string_view name) const {
  for (std::size_t c = 0; c < channels_.size(); ++c) {
    if (channels_[c].name == name) return static_cast<int>(c);
  }
  return std::nullopt;
}

std::optional<std::size_t> TimeSeriesTable::find_row(std::string_view timestamp) const {
  const auto it = std::find(timestamps_.begin(), timestamps_.end(), timestamp);
  if (it == timestamps_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - timestamps_.begin());
}

TimeSeriesTable TimeSeriesTable::with_values(Eigen::MatrixXd values) const {
  return TimeSeriesTable(timestamps_, channels_, std::move(values));
}

bool TimeSeriesTable::operator==(const TimeSeriesTable& other) const {
  if (timestamps_ != other.timestamps_ || channels_ != other.channels_) return false;
  if (values_.rows() != other.values_.rows() || values_.cols() != other.values_.cols()) return false;
  for (Eigen::Index i = 0; i < values_.size(); ++i) {
    const double a = values_.data()[i];
    const double b = other.values_.data()[i];
    if (std::isnan(a) != std::isnan(b)) return false;
    if (!std::isnan(a) && a != b) return false;
  }
  return true;
}

double parse_timestamp(std::string_view text) {
  text = trim(text);
  if (text.empty()) throw Error(ErrorKind::ingestion, "empty timestamp");
  if (text.find('-', 1) == std::string_view::npos && text.find(':') == std::string_view::npos) {
    if (const auto v = parse_number(text)) return *v;
    throw Error(ErrorKind::ingestion, fmt::format("bad timestamp '{}'", text));
  }
  // YYYY-MM-DD[T ]hh:mm[:ss[.fff]][Z]
  const std::string_view whole = text;
  if (text.back() == 'Z') text.remove_suffix(1);
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') {
    throw Error(ErrorKind::ingestion, fmt::format("bad timestamp '{}'", whole));
  }
  const int year = parse_int_field(text.substr(0, 4), whole);
  const int month = parse_int_field(text.substr(5, 2), whole);
  const int day = parse_int_field(text.substr(8, 2), whole);
  const std::chrono::year_month_day ymd{std::chrono::year{year},
                                        std::chrono::month{static_cast<unsigned>(month)},
                                        std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok()) throw Error(ErrorKind::ingestion, fmt::format("bad date in '{}'", whole));
  double seconds = static_cast<double>(std::chrono::sys_days{ymd}.time_since_epoch().count()) * 86400.0;
  if (text.size() > 10) {
    if ((text[10] != 'T' && text[10] != ' ') || text.size() < 16 || text[13] != ':') {
      throw Error(ErrorKind::ingestion, fmt::format("bad time in '{}'", whole));
    }
    const int hour = parse_int_field(text.substr(11, 2), whole);
    const int minute = parse_int_field(text.substr(14, 2), whole);
    double sec = 0.0;
    if (text.size() > 16) {
      if (text[16] != ':') throw Error(ErrorKind::ingestion, fmt::format("bad time in '{}'", whole));
      const auto parsed = parse_number(text.substr(17));
      if (!parsed) throw Error(ErrorKind::ingestion, fmt::format("bad seconds in '{}'", whole));
      sec = *parsed;
    }
    seconds += hour * 3600.0 + minute * 60.0 + sec;
  }
  return seconds;
}

RoleMap read_roles(std::istream& in) {
  RoleMap roles;
  std::string line;
  while (std::getline(in, line)) {
    const auto view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    const auto cells = split_commas(view);
    if (cells.size() != 2) {
      throw Error(ErrorKind::config, fmt::format("role line '{}' must be 'channel,role'", view));
    }
    if (cells[0] == "channel" && cells[1] == "role") continue;
    roles.emplace(std::string(cells[0]), parse_role(cells[1]));
  }
  if (roles.empty()) throw Error(ErrorKind::config, "role map is empty");
  return roles;
}

RoleMap load_roles(const std::string& path) {
  auto in = open_input(path);
  return read_roles(in);
}

void write_roles(std::ostream& out, const TimeSeriesTable& table) {
  out << "channel,role\n";
  for (const auto& ch : table.channels()) out << ch.name << ',' << to_string(ch.role) << '\n';
}

void save_roles(const std::string& path, const TimeSeriesTable& table) {
  auto out = open_output(path);
  write_roles(out, table);
}

TimeSeriesTable read_csv(std::istream& in, const RoleMap& roles) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::ingestion, "missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_commas(line);
  if (header.empty() || header[0] != "timestamp") {
    throw Error(ErrorKind::ingestion, "first column must be 'timestamp'");
  }

  std::vector<Channel> channels;
  std::vector<int> source_column;
  for (std::size_t i = 1; i < header.size(); ++i) {
    const auto it = roles.find(header[i]);
    if (it == roles.end()) {
      warn(fmt::format("column '{}' has no role and is ignored", header[i]));
      continue;
    }
    channels.push_back({std::string(header[i]), it->second});
    source_column.push_back(static_cast<int>(i));
  }
  for (const auto& [name, role] : roles) {
    if (std::none_of(channels.begin(), channels.end(), [&](const Channel& c) { return c.name == name; })) {
      throw Error(ErrorKind::config, fmt::format("role map names unknown channel '{}'", name));
    }
  }

  std::vector<std::string> timestamps;
  std::vector<double> flat;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorKind::ingestion, fmt::format("line {} has {} cells, header has {}", line_no,
                                                    cells.size(), header.size()));
    }
    timestamps.emplace_back(cells[0]);
    for (const int col : source_column) {
      const auto cell = cells[col];
      if (cell.empty()) {
        flat.push_back(kMissing);
        continue;
      }
      const auto v = parse_number(cell);
      if (!v || !std::isfinite(*v)) {
        throw Error(ErrorKind::ingestion,
                    fmt::format("line {}: '{}' is not a finite number", line_no, cell));
      }
      flat.push_back(*v);
    }
  }

  // Regular grid check.
  if (timestamps.size() >= 2) {
    std::vector<double> t(timestamps.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = parse_timestamp(timestamps[i]);
    const double step = t[1] - t[0];
    if (!(step > 0.0)) throw Error(ErrorKind::ingestion, "timestamps must be strictly increasing");
    for (std::size_t i = 2; i < t.size(); ++i) {
      if (std::abs((t[i] - t[i - 1]) - step) > 1e-6 * std::max(1.0, std::abs(step))) {
        throw Error(ErrorKind::ingestion,
                    fmt::format("irregular sampling at '{}' (expected interval {})", timestamps[i], step));
      }
    }
  } else if (timestamps.size() == 1) {
    parse_timestamp(timestamps[0]);
  }

  const auto rows = static_cast<Eigen::Index>(timestamps.size());
  const auto cols = static_cast<Eigen::Index>(channels.size());
  Eigen::MatrixXd values(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) values(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  }
  return TimeSeriesTable(std::move(timestamps), std::move(channels), std::move(values));
}

TimeSeriesTable load_csv(const std::string& path, const RoleMap& roles) {
  auto in = open_input(path);
  return read_csv(in, roles);
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void write_csv(std::ostream& out, const TimeSeriesTable& table) {
  out << "timestamp";
  for (const auto& ch : table.channels()) out << ',' << ch.name;
  out << '\n';
  for (std::size_t r = 0; r < table.length(); ++r) {
    out << table.timestamps()[r];
    for (std::size_t c = 0; c < table.channel_count(); ++c) {
      out << ',';
      if (table.observed(r, c)) out << format_double(table.value(r, c));
    }
    out << '\n';
  }
}

void save_csv(const std::string& path, const TimeSeriesTable& table) {
  auto out = open_output(path);
  write_csv(out, table);
  if (!out) throw Error(ErrorKind::io, fmt::format("failed writing '{}'", path));
}

ZScoreStats zscore_fit(const TimeSeriesTable& table) {
  ZScoreStats stats;
  for (std::size_t c = 0; c < table.channel_count(); ++c) {
    const auto& name = table.channels()[c].name;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < table.length(); ++r) {
      if (table.observed(r, c)) {
        sum += table.value(r, c);
        ++n;
      }
    }
    if (n == 0) throw Error(ErrorKind::fit, fmt::format("channel '{}' has no observed values", name));
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t r = 0; r < table.length(); ++r) {
      if (table.observed(r, c)) ss += (table.value(r, c) - mean) * (table.value(r, c) - mean);
    }
    double sd = std::sqrt(ss / static_cast<double>(n));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      warn(fmt::format("channel '{}' is constant; using unit scale", name));
      sd = 1.0;
    }
    stats.channels.push_back(name);
    stats.mean.push_back(mean);
    stats.scale.push_back(sd);
  }
  return stats;
}

namespace {

void check_stats(const TimeSeriesTable& table, const ZScoreStats& stats) {
  if (stats.channels.size() != table.channel_count()) {
    throw Error(ErrorKind::config, fmt::format("normalization covers {} channels, table has {}",
                                               stats.channels.size(), table.channel_count()));
  }
  for (std::size_t c = 0; c < table.channel_count(); ++c) {
    if (stats.channels[c] != table.channels()[c].name) {
      throw Error(ErrorKind::config, fmt::format("normalization channel '{}' does not match '{}'",
                                                 stats.channels[c], table.channels()[c].name));
    }
  }
}

}  // namespace

TimeSeriesTable zscore_apply(const TimeSeriesTable& table, const ZScoreStats& stats) {
  check_stats(table, stats);
  Eigen::MatrixXd values = table.values();
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    values.col(c) = (values.col(c).array() - stats.mean[c]) / stats.scale[c];
  }
  return table.with_values(std::move(values));
}

TimeSeriesTable zscore_invert(const TimeSeriesTable& table, const ZScoreStats& stats) {
  check_stats(table, stats);
  Eigen::MatrixXd values = table.values();
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    values.col(c) = values.col(c).array() * stats.scale[c] + stats.mean[c];
  }
  return table.with_values(std::move(values));
}

std::vector<double> missing_rates(const TimeSeriesTable& table) {
  std::vector<double> rates(table.channel_count(), 0.0);
  if (table.length() == 0) return rates;
  for (std::size_t c = 0; c < table.channel_count(); ++c) {
    std::size_t missing = 0;
    for (std::size_t r = 0; r < table.length(); ++r) missing += table.observed(r, c) ? 0 : 1;
    rates[c] = static_cast<double>(missing) / static_cast<double>(table.length());
  }
  return rates;
}

}  // namespace stdiff
