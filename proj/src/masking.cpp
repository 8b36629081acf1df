#include "stdiff/masking.hpp"

#include "stdiff/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_map>

#include <fmt/core.h>

namespace stdiff {

void MaskPlan::validate() const {
  if (!(realized_target > 0.0 && realized_target < 1.0)) {
    throw Error(ErrorKind::generation, fmt::format("realized target {} outside (0, 1)", realized_target));
  }
  if (!(tolerance > 0.0)) throw Error(ErrorKind::generation, "tolerance must be positive");
  if (!(mean_block_length >= 1.0)) throw Error(ErrorKind::generation, "mean block length must be >= 1");
  if (!(cofailure_fraction >= 0.0 && cofailure_fraction <= 1.0)) {
    throw Error(ErrorKind::generation, "co-failure fraction must lie in [0, 1]");
  }
}

MaskPlan MaskPlan::scenario(int level, std::uint64_t seed) {
  MaskPlan plan;
  plan.level = level;
  plan.seed = seed;
  switch (level) {
    case 20: plan.realized_target = 0.11575; break;
    case 30: plan.realized_target = 0.17225; break;
    case 40: plan.realized_target = 0.22675; break;
    case 50: plan.realized_target = 0.2828; break;
    default:
      throw Error(ErrorKind::generation, fmt::format("missingness level must be 20, 30, 40 or 50, got {}", level));
  }
  return plan;
}

double MaskResult::state_rate() const { return mean_rate(realized_rates, masked.state_channels()); }

double MaskResult::covariate_rate() const {
  return mean_rate(realized_rates, masked.covariate_channels());
}

double mean_rate(const std::vector<double>& rates, const std::vector<int>& channels) {
  if (channels.empty()) return 0.0;
  double sum = 0.0;
  for (const int c : channels) sum += rates.at(static_cast<std::size_t>(c));
  return sum / static_cast<double>(channels.size());
}

MaskResult generate_block_masks(const TimeSeriesTable& table, const MaskPlan& plan) {
  plan.validate();
  const auto states = table.state_channels();
  const auto covariates = table.covariate_channels();
  const std::size_t len = table.length();
  if (states.empty()) throw Error(ErrorKind::generation, "table has no state channels");
  if (len == 0) throw Error(ErrorKind::generation, "table is empty");

  Eigen::MatrixXd values = table.values();
  std::vector<std::uint8_t> hidden(values.size(), 0);
  auto is_missing = [&](std::size_t r, int c) { return std::isnan(values(static_cast<Eigen::Index>(r), c)); };

  std::size_t missing_state = 0;
  for (const int c : states) {
    for (std::size_t r = 0; r < len; ++r) missing_state += is_missing(r, c) ? 1 : 0;
  }
  const double total = static_cast<double>(len * states.size());
  const double target_count = plan.realized_target * total;
  if (static_cast<double>(missing_state) > (plan.realized_target + plan.tolerance) * total) {
    throw Error(ErrorKind::generation,
                fmt::format("state channels are already {:.2f}% missing, above the {:.2f}% target",
                            100.0 * missing_state / total, 100.0 * plan.realized_target));
  }

  std::mt19937_64 rng(plan.seed);
  std::geometric_distribution<std::size_t> block_length(1.0 / plan.mean_block_length);

  MaskResult result;
  std::vector<LedgerEntry> ledger;
  auto hide = [&](std::size_t r, int c) {
    const auto row = static_cast<Eigen::Index>(r);
    ledger.push_back({r, c, values(row, c)});
    values(row, c) = kMissing;
  };

  const std::size_t max_attempts = 1000 + 100 * len;
  std::size_t attempts = 0;
  while (static_cast<double>(missing_state) < target_count) {
    if (++attempts > max_attempts) {
      throw Error(ErrorKind::generation, "could not reach the target missing rate");
    }
    std::size_t length = std::min(len, 1 + block_length(rng));
    std::uniform_int_distribution<std::size_t> start_dist(0, len - length);
    const std::size_t start = start_dist(rng);

    // Fill the block left to right and stop the moment the target is reached.
    // Overlapping blocks merge into longer gaps; `fresh` marks the rows this
    // block newly hid so covariates co-fail only there.
    std::size_t placed = 0;
    std::vector<std::uint8_t> fresh(length, 0);
    for (std::size_t r = start; r < start + length; ++r) {
      if (static_cast<double>(missing_state) >= target_count) break;
      for (const int c : states) {
        if (!is_missing(r, c)) {
          hide(r, c);
          ++missing_state;
          fresh[r - start] = 1;
        }
      }
      ++placed;
    }
    if (placed == 0) break;
    length = placed;
    result.blocks.push_back({start, length});

    const auto sub = static_cast<std::size_t>(std::lround(plan.cofailure_fraction * static_cast<double>(length)));
    for (const int c : covariates) {
      if (sub == 0) continue;
      std::uniform_int_distribution<std::size_t> offset_dist(0, length - sub);
      const std::size_t from = start + offset_dist(rng);
      for (std::size_t r = from; r < from + sub; ++r) {
        if (fresh[r - start] != 0 && !is_missing(r, c)) hide(r, c);
      }
    }
  }

  std::sort(ledger.begin(), ledger.end(), [](const LedgerEntry& a, const LedgerEntry& b) {
    return a.row != b.row ? a.row < b.row : a.channel < b.channel;
  });
  result.masked = table.with_values(std::move(values));
  result.ledger = std::move(ledger);
  result.realized_rates = missing_rates(result.masked);
  return result;
}

void write_ledger(std::ostream& out, const TimeSeriesTable& table, const std::vector<LedgerEntry>& ledger) {
  out << "t,channel,true_value\n";
  for (const auto& e : ledger) {
    out << table.timestamps().at(e.row) << ',' << table.channels().at(static_cast<std::size_t>(e.channel)).name
        << ',' << format_double(e.true_value) << '\n';
  }
}

void save_ledger(const std::string& path, const TimeSeriesTable& table, const std::vector<LedgerEntry>& ledger) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, fmt::format("cannot write '{}'", path));
  write_ledger(out, table, ledger);
}

std::vector<LedgerEntry> read_ledger(std::istream& in, const TimeSeriesTable& table) {
  std::unordered_map<std::string_view, std::size_t> rows;
  for (std::size_t r = 0; r < table.length(); ++r) rows.emplace(table.timestamps()[r], r);

  std::vector<LedgerEntry> ledger;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (line_no == 1 && line == "t,channel,true_value")) continue;
    const auto first = line.find(',');
    const auto second = line.find(',', first + 1);
    if (first == std::string::npos || second == std::string::npos) {
      throw Error(ErrorKind::ingestion, fmt::format("ledger line {} is malformed", line_no));
    }
    const std::string_view view(line);
    const auto t = view.substr(0, first);
    const auto name = view.substr(first + 1, second - first - 1);
    const auto number = view.substr(second + 1);
    const auto row = rows.find(t);
    if (row == rows.end()) throw Error(ErrorKind::ingestion, fmt::format("ledger timestamp '{}' not in table", t));
    const auto channel = table.find_channel(name);
    if (!channel) throw Error(ErrorKind::ingestion, fmt::format("ledger channel '{}' not in table", name));
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(number.data(), number.data() + number.size(), value);
    if (ec != std::errc() || ptr != number.data() + number.size()) {
      throw Error(ErrorKind::ingestion, fmt::format("ledger line {} has a bad value", line_no));
    }
    ledger.push_back({row->second, *channel, value});
  }
  return ledger;
}

std::vector<LedgerEntry> load_ledger(const std::string& path, const TimeSeriesTable& table) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, fmt::format("cannot open '{}'", path));
  return read_ledger(in, table);
}

}  // namespace stdiff
