#pragma once

#include "stdiff/checkpoint.hpp"
#include "stdiff/diffusion.hpp"
#include "stdiff/masking.hpp"
#include "stdiff/model.hpp"
#include "stdiff/table.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace stdiff {

enum class ImputeMode { full, history_only };
enum class CovariateFallback { mask_zero, locf_decay, linear, kalman };

std::string_view to_string(ImputeMode mode);
std::string_view to_string(CovariateFallback fallback);
/// Accepts `full`, `history-only` / `history_only`.
ImputeMode parse_impute_mode(std::string_view text);
/// Accepts `mask-zero`, `locf` / `locf-decay`, `linear`, `kalman` (underscores too).
CovariateFallback parse_covariate_fallback(std::string_view text);

/// A maximal run of rows where at least one state channel is missing.
struct GapSpec {
  std::optional<std::size_t> anchor;  // last fully observed row before the run
  std::size_t start = 0;              // first missing row
  std::size_t horizon = 0;            // run length H
  std::vector<int> channels;          // state channels missing somewhere in the run

  bool anchorable() const noexcept { return anchor.has_value(); }
  bool operator==(const GapSpec&) const = default;
};

std::vector<GapSpec> find_gaps(const TimeSeriesTable& table);

struct ImputationResult {
  std::vector<Eigen::MatrixXd> samples;  // S trajectories, each D_x x H (z-score space)
  Eigen::MatrixXd point_estimate;        // D_x x H, mean over samples
  std::uint64_t seed = 0;

  int sample_count() const noexcept { return static_cast<int>(samples.size()); }
};

/// Counts reverse-chain calls and the sample evaluations they cover.
class CountingPredictor final : public NoisePredictor {
 public:
  explicit CountingPredictor(NoisePredictor& inner) : inner_(inner) {}

  int state_dim() const override { return inner_.state_dim(); }
  void bind_context(const Eigen::MatrixXd& features) override { inner_.bind_context(features); }
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x_noisy, int tau) override {
    ++calls_;
    evaluations_ += static_cast<std::size_t>(x_noisy.cols());
    return inner_.predict(x_noisy, tau);
  }

  std::size_t calls() const noexcept { return calls_; }
  std::size_t evaluations() const noexcept { return evaluations_; }

 private:
  NoisePredictor& inner_;
  std::size_t calls_ = 0;
  std::size_t evaluations_ = 0;
};

/// Recursive reverse sampling across one gap of a z-score table whose
/// covariates have already been through any fallback. Each of the H steps runs
/// a full T-step reverse chain conditioned on the previous generated state and
/// that step's covariates. Observed state entries inside the run are kept.
ImputationResult impute_gap(const GapSpec& gap, const TimeSeriesTable& normalized, NoisePredictor& predictor,
                            const NoiseSchedule& schedule, int samples, std::uint64_t seed,
                            ImputeMode mode = ImputeMode::full);
ImputationResult impute_gap(const GapSpec& gap, const TimeSeriesTable& normalized, const ModelParams& params,
                            const NoiseSchedule& schedule, int samples, std::uint64_t seed,
                            ImputeMode mode = ImputeMode::full);

struct ImputeOptions {
  int samples = 16;
  std::uint64_t seed = 0;
  ImputeMode mode = ImputeMode::full;
  CovariateFallback fallback = CovariateFallback::mask_zero;
  double locf_decay = 0.98;
  int threads = 1;
  /// Back-fill gaps at the series start instead of leaving them missing.
  bool fill_unanchorable = false;
};

struct GapOutcome {
  GapSpec gap;
  std::optional<ImputationResult> result;  // empty for unanchorable gaps
};

struct SeriesImputation {
  TimeSeriesTable completed;  // original units
  std::vector<GapOutcome> gaps;
};

/// Seed used for a gap starting at `start` under a run seed.
std::uint64_t gap_seed(std::uint64_t seed, std::size_t start);

/// Covariates of a z-score table after the configured fallback. Filled entries
/// count as observed from then on.
TimeSeriesTable fill_covariates(const TimeSeriesTable& normalized, CovariateFallback fallback, double locf_decay = 0.98);

/// Imputes every anchorable gap and writes de-normalized point estimates into
/// the missing state entries. Observed entries are never modified.
SeriesImputation impute_series(const TimeSeriesTable& table, const Checkpoint& checkpoint, const ImputeOptions& options);

/// `gap_id,anchor,start,horizon,status,channel,mae`; MAE columns are filled
/// when a ledger is supplied.
void write_gap_report(std::ostream& out, const TimeSeriesTable& table, const SeriesImputation& imputation,
                      const std::vector<LedgerEntry>* ledger = nullptr);

}  // namespace stdiff
