#include "stdiff/imputer.hpp"

#include "stdiff/baselines.hpp"
#include "stdiff/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <random>
#include <thread>

#include <fmt/core.h>

namespace stdiff {

std::string_view to_string(ImputeMode mode) { return mode == ImputeMode::full ? "full" : "history-only"; }

std::string_view to_string(CovariateFallback fallback) {
  switch (fallback) {
    case CovariateFallback::mask_zero: return "mask-zero";
    case CovariateFallback::locf_decay: return "locf";
    case CovariateFallback::linear: return "linear";
    case CovariateFallback::kalman: return "kalman";
  }
  return "mask-zero";
}

ImputeMode parse_impute_mode(std::string_view text) {
  if (text == "full") return ImputeMode::full;
  if (text == "history-only" || text == "history_only") return ImputeMode::history_only;
  throw Error(ErrorKind::config, fmt::format("unknown imputation mode '{}'", text));
}

CovariateFallback parse_covariate_fallback(std::string_view text) {
  if (text == "mask-zero" || text == "mask_zero") return CovariateFallback::mask_zero;
  if (text == "locf" || text == "locf-decay" || text == "locf_decay") return CovariateFallback::locf_decay;
  if (text == "linear") return CovariateFallback::linear;
  if (text == "kalman") return CovariateFallback::kalman;
  throw Error(ErrorKind::config, fmt::format("unknown covariate fallback '{}'", text));
}

std::vector<GapSpec> find_gaps(const TimeSeriesTable& table) {
  const auto states = table.state_channels();
  std::vector<GapSpec> gaps;
  std::optional<GapSpec> open;
  for (std::size_t r = 0; r < table.length(); ++r) {
    std::vector<int> missing;
    for (const int c : states) {
      if (!table.observed(r, static_cast<std::size_t>(c))) missing.push_back(c);
    }
    if (missing.empty()) {
      if (open) {
        gaps.push_back(std::move(*open));
        open.reset();
      }
      continue;
    }
    if (!open) {
      open.emplace();
      open->start = r;
      if (r > 0) open->anchor = r - 1;
    }
    ++open->horizon;
    for (const int c : missing) {
      if (std::find(open->channels.begin(), open->channels.end(), c) == open->channels.end()) {
        open->channels.push_back(c);
      }
    }
  }
  if (open) gaps.push_back(std::move(*open));
  for (auto& g : gaps) std::sort(g.channels.begin(), g.channels.end());
  return gaps;
}

std::uint64_t gap_seed(std::uint64_t seed, std::size_t start) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(start), static_cast<std::uint32_t>(static_cast<std::uint64_t>(start) >> 32)};
  std::uint32_t words[2];
  seq.generate(std::begin(words), std::end(words));
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

ImputationResult impute_gap(const GapSpec& gap, const TimeSeriesTable& normalized, NoisePredictor& predictor,
                            const NoiseSchedule& schedule, int samples, std::uint64_t seed, ImputeMode mode) {
  if (!gap.anchor) throw Error(ErrorKind::contract, fmt::format("gap at row {} has no anchor", gap.start));
  if (samples < 1) throw Error(ErrorKind::parameter, "sample count must be positive");
  if (gap.horizon < 1) throw Error(ErrorKind::parameter, "gap horizon must be at least 1");
  const auto states = normalized.state_channels();
  const auto covariates = normalized.covariate_channels();
  const auto nx = static_cast<Eigen::Index>(states.size());
  const auto nc = static_cast<Eigen::Index>(covariates.size());
  if (predictor.state_dim() != nx) {
    throw Error(ErrorKind::config, fmt::format("predictor has {} state dims, table has {}", predictor.state_dim(), nx));
  }
  if (gap.start + gap.horizon > normalized.length() || *gap.anchor + 1 != gap.start) {
    throw Error(ErrorKind::parameter, "gap does not fit the table");
  }

  const std::size_t k = *gap.anchor;
  Eigen::VectorXd anchor(nx);
  for (Eigen::Index i = 0; i < nx; ++i) {
    const auto c = static_cast<std::size_t>(states[static_cast<std::size_t>(i)]);
    if (!normalized.observed(k, c)) {
      throw Error(ErrorKind::contract, fmt::format("anchor row {} is not fully observed", k));
    }
    anchor(i) = normalized.value(k, c);
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index s = 0; s < cols; ++s) {
      for (Eigen::Index i = 0; i < rows; ++i) m(i, s) = normal(rng);
    }
    return m;
  };

  const int steps = schedule.steps();
  const auto H = static_cast<Eigen::Index>(gap.horizon);
  ImputationResult result;
  result.seed = seed;
  result.samples.assign(static_cast<std::size_t>(samples), Eigen::MatrixXd(nx, H));

  Eigen::MatrixXd previous = anchor.replicate(1, samples);
  Eigen::MatrixXd features(nx + 2 * nc, samples);
  for (Eigen::Index h = 0; h < H; ++h) {
    const std::size_t row = k + 1 + static_cast<std::size_t>(h);
    features.topRows(nx) = previous;
    for (Eigen::Index j = 0; j < nc; ++j) {
      const auto c = static_cast<std::size_t>(covariates[static_cast<std::size_t>(j)]);
      const bool use = mode == ImputeMode::full && normalized.observed(row, c);
      features.row(nx + j).setConstant(use ? normalized.value(row, c) : 0.0);
      features.row(nx + nc + j).setConstant(use ? 1.0 : 0.0);
    }
    predictor.bind_context(features);

    Eigen::MatrixXd x = gaussian(nx, samples);
    for (int tau = steps; tau >= 1; --tau) {
      const Eigen::MatrixXd eps_hat = predictor.predict(x, tau);
      if (tau > 1) {
        x = reverse_step(x, eps_hat, tau, schedule, gaussian(nx, samples));
      } else {
        x = reverse_step(x, eps_hat, tau, schedule);
      }
    }
    if (!x.allFinite()) {
      throw Error(ErrorKind::sampling_diverged, fmt::format("non-finite sample at gap row {} step {}", gap.start, h + 1));
    }
    for (Eigen::Index i = 0; i < nx; ++i) {
      const auto c = static_cast<std::size_t>(states[static_cast<std::size_t>(i)]);
      if (normalized.observed(row, c)) x.row(i).setConstant(normalized.value(row, c));
    }
    for (int s = 0; s < samples; ++s) result.samples[static_cast<std::size_t>(s)].col(h) = x.col(s);
    previous = x;
  }

  result.point_estimate = Eigen::MatrixXd::Zero(nx, H);
  for (const auto& s : result.samples) result.point_estimate += s;
  result.point_estimate /= static_cast<double>(samples);
  return result;
}

ImputationResult impute_gap(const GapSpec& gap, const TimeSeriesTable& normalized, const ModelParams& params,
                            const NoiseSchedule& schedule, int samples, std::uint64_t seed, ImputeMode mode) {
  if (params.dims().state_dim != static_cast<int>(normalized.state_channels().size()) ||
      params.dims().control_dim != static_cast<int>(normalized.channels_with_role(ChannelRole::control).size()) ||
      params.dims().exogenous_dim != static_cast<int>(normalized.channels_with_role(ChannelRole::exogenous).size())) {
    throw Error(ErrorKind::config, fmt::format("model dims {} do not match table dims {}",
                                               params.dims().describe_data_dims(),
                                               data_dims(normalized).describe_data_dims()));
  }
  ModelPredictor predictor(params, schedule.steps());
  return impute_gap(gap, normalized, predictor, schedule, samples, seed, mode);
}

TimeSeriesTable fill_covariates(const TimeSeriesTable& normalized, CovariateFallback fallback, double locf_decay) {
  const auto covariates = normalized.covariate_channels();
  if (covariates.empty()) return normalized;
  switch (fallback) {
    case CovariateFallback::mask_zero: return normalized;
    case CovariateFallback::linear: return baseline_linear_interp(normalized, covariates);
    case CovariateFallback::kalman: return baseline_kalman(normalized, covariates);
    case CovariateFallback::locf_decay: {
      Eigen::MatrixXd values = normalized.values();
      for (const int c : covariates) {
        std::vector<double> series(normalized.length());
        for (std::size_t r = 0; r < series.size(); ++r) series[r] = normalized.value(r, static_cast<std::size_t>(c));
        const auto filled = fill_locf_decay(series, locf_decay, 0.0);
        for (std::size_t r = 0; r < series.size(); ++r) values(static_cast<Eigen::Index>(r), c) = filled[r];
      }
      return normalized.with_values(std::move(values));
    }
  }
  return normalized;
}

SeriesImputation impute_series(const TimeSeriesTable& table, const Checkpoint& checkpoint, const ImputeOptions& options) {
  const ModelDims table_dims = data_dims(table);
  const ModelDims& model_dims = checkpoint.params.dims();
  if (table_dims.state_dim != model_dims.state_dim || table_dims.control_dim != model_dims.control_dim ||
      table_dims.exogenous_dim != model_dims.exogenous_dim) {
    throw Error(ErrorKind::config, fmt::format("checkpoint dims {} do not match table dims {}",
                                               model_dims.describe_data_dims(), table_dims.describe_data_dims()));
  }
  if (options.samples < 1) throw Error(ErrorKind::parameter, "sample count must be positive");
  if (!checkpoint.params.all_finite()) throw Error(ErrorKind::config, "checkpoint contains non-finite weights");

  const NoiseSchedule schedule(checkpoint.schedule);
  const TimeSeriesTable normalized = zscore_apply(table, checkpoint.stats);
  const TimeSeriesTable conditioning =
      options.mode == ImputeMode::full ? fill_covariates(normalized, options.fallback, options.locf_decay) : normalized;

  SeriesImputation out;
  for (auto& gap : find_gaps(table)) out.gaps.push_back({std::move(gap), std::nullopt});

  std::vector<std::size_t> work;
  for (std::size_t i = 0; i < out.gaps.size(); ++i) {
    if (out.gaps[i].gap.anchorable()) work.push_back(i);
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    ModelPredictor predictor(checkpoint.params, schedule.steps());
    while (true) {
      const std::size_t w = next.fetch_add(1);
      if (w >= work.size()) return;
      auto& outcome = out.gaps[work[w]];
      try {
        outcome.result = impute_gap(outcome.gap, conditioning, predictor, schedule, options.samples,
                                    gap_seed(options.seed, outcome.gap.start), options.mode);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(work.size());
        return;
      }
    }
  };
  const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(work.size())));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  const auto states = table.state_channels();
  Eigen::MatrixXd values = table.values();
  for (const auto& outcome : out.gaps) {
    const auto& gap = outcome.gap;
    for (std::size_t h = 0; h < gap.horizon; ++h) {
      const std::size_t row = gap.start + h;
      for (std::size_t i = 0; i < states.size(); ++i) {
        const int c = states[i];
        if (table.observed(row, static_cast<std::size_t>(c))) continue;
        const auto r = static_cast<Eigen::Index>(row);
        if (outcome.result) {
          values(r, c) = outcome.result->point_estimate(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(h)) *
                             checkpoint.stats.scale[static_cast<std::size_t>(c)] +
                         checkpoint.stats.mean[static_cast<std::size_t>(c)];
        } else if (options.fill_unanchorable) {
          for (std::size_t later = gap.start + gap.horizon; later < table.length(); ++later) {
            if (table.observed(later, static_cast<std::size_t>(c))) {
              values(r, c) = table.value(later, static_cast<std::size_t>(c));
              break;
            }
          }
        }
      }
    }
  }
  out.completed = table.with_values(std::move(values));
  return out;
}

void write_gap_report(std::ostream& out, const TimeSeriesTable& table, const SeriesImputation& imputation,
                      const std::vector<LedgerEntry>* ledger) {
  std::map<std::pair<std::size_t, int>, double> truth;
  if (ledger) {
    for (const auto& e : *ledger) truth[{e.row, e.channel}] = e.true_value;
  }
  const auto& completed = imputation.completed;
  out << "gap_id,anchor,start,horizon,status,channel,mae\n";
  for (std::size_t g = 0; g < imputation.gaps.size(); ++g) {
    const auto& outcome = imputation.gaps[g];
    const auto& gap = outcome.gap;
    const std::string anchor = gap.anchor ? table.timestamps()[*gap.anchor] : std::string();
    const std::string status = outcome.result ? "imputed" : "unanchorable";
    for (const int c : gap.channels) {
      std::string mae;
      if (ledger) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t r = gap.start; r < gap.start + gap.horizon; ++r) {
          const auto it = truth.find({r, c});
          if (it == truth.end() || !completed.observed(r, static_cast<std::size_t>(c))) continue;
          sum += std::abs(completed.value(r, static_cast<std::size_t>(c)) - it->second);
          ++n;
        }
        if (n > 0) mae = format_double(sum / static_cast<double>(n));
      }
      out << g << ',' << anchor << ',' << table.timestamps()[gap.start] << ',' << gap.horizon << ',' << status << ','
          << table.channels()[static_cast<std::size_t>(c)].name << ',' << mae << '\n';
    }
  }
}

}  // namespace stdiff
