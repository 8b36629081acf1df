#pragma once

#include "stdiff/diffusion.hpp"
#include "stdiff/model.hpp"
#include "stdiff/table.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace stdiff {

/// Everything needed to impute with a trained model: weights, the diffusion
/// schedule it was trained under, and the normalization of the training table.
struct Checkpoint {
  ModelParams params;
  ScheduleConfig schedule;
  ZScoreStats stats;
  std::vector<Channel> channels;

  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: magic `STDIFFCK`, u32 version, u64 header length, JSON
/// header (dims, schedule, channels, normalization), then the weights as
/// little-endian float64.
void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

/// Data dims implied by a table's channel roles.
ModelDims data_dims(const TimeSeriesTable& table, ModelDims sizes = {});

}  // namespace stdiff
