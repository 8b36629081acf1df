#pragma once

#include "stdiff/table.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace stdiff {

/// Contiguous block-missingness scenario. `realized_target` is the fraction of
/// missing state entries the generator aims for; `level` is the nominal
/// scenario label (20/30/40/50).
struct MaskPlan {
  int level = 20;
  double realized_target = 0.11575;
  double tolerance = 0.01;
  double mean_block_length = 48.0;
  double cofailure_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const;

  /// Scenario profile calibrated to the effective per-variable rates of the
  /// four nominal levels: states about 11.6 / 17.2 / 22.7 / 28.3 percent.
  static MaskPlan scenario(int level, std::uint64_t seed = 0);
};

inline constexpr int kScenarioLevels[] = {20, 30, 40, 50};

struct LedgerEntry {
  std::size_t row;
  int channel;
  double true_value;

  bool operator==(const LedgerEntry&) const = default;
};

struct MaskBlock {
  std::size_t start;
  std::size_t length;
};

struct MaskResult {
  TimeSeriesTable masked;
  std::vector<LedgerEntry> ledger;
  std::vector<MaskBlock> blocks;
  /// Missing fraction per channel after masking (pre-existing gaps included).
  std::vector<double> realized_rates;

  double state_rate() const;
  double covariate_rate() const;
};

/// Places geometric-length blocks over all state channels jointly until the
/// mean state missing rate reaches the plan's target; inside each block, every
/// covariate loses a contiguous sub-block of `cofailure_fraction` of the block
/// length at a random offset. Already-missing entries are never touched.
MaskResult generate_block_masks(const TimeSeriesTable& table, const MaskPlan& plan);

/// Ledger file rows: `t,channel,true_value` with t the row's timestamp.
void write_ledger(std::ostream& out, const TimeSeriesTable& table, const std::vector<LedgerEntry>& ledger);
void save_ledger(const std::string& path, const TimeSeriesTable& table, const std::vector<LedgerEntry>& ledger);
std::vector<LedgerEntry> read_ledger(std::istream& in, const TimeSeriesTable& table);
std::vector<LedgerEntry> load_ledger(const std::string& path, const TimeSeriesTable& table);

/// Mean of per-channel rates over the given channels.
double mean_rate(const std::vector<double>& rates, const std::vector<int>& channels);

}  // namespace stdiff
