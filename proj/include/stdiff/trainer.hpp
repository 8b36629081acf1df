#pragma once

#include "stdiff/checkpoint.hpp"
#include "stdiff/diffusion.hpp"
#include "stdiff/model.hpp"
#include "stdiff/table.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace stdiff {

struct TrainConfig {
  ScheduleConfig schedule;
  /// Model sizes; the data dims are taken from the table at train time.
  ModelDims architecture;
  int batch_size = 128;
  int steps = 2000;
  double learning_rate = 1e-3;
  /// Cosine decay from `learning_rate` to `learning_rate * final_lr_fraction`
  /// over `steps`; 1 keeps the rate constant.
  double final_lr_fraction = 1.0;
  /// Per-entry probability of masking a covariate during training.
  double dropout = 0.1;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  int eval_interval = 100;
  /// Fixed (tau, eps) draws per held-out transition for the validation loss.
  int eval_draws = 4;

  void validate() const;
};

/// One observed transition (x_{t-1}, u_t, w_t, x_t) in z-score space.
struct TransitionSample {
  StateVector x_prev;
  Eigen::VectorXd control;
  Eigen::VectorXd exogenous;
  Eigen::VectorXd covariate_mask;
  StateVector x_next;
  std::size_t row = 0;  // row index of x_next

  ConditioningContext context() const;
};

/// Every consecutive pair whose state channels are observed at both ends.
/// Missing covariates are carried with mask 0 and value 0.
std::vector<TransitionSample> extract_transitions(const TimeSeriesTable& normalized);

/// Model inputs for a batch: encoder features (one column per sample) and targets.
struct TransitionBatch {
  Eigen::MatrixXd features;
  Eigen::MatrixXd x_next;
};

TransitionBatch stack_batch(std::span<const TransitionSample> samples);

/// Masks each covariate entry independently with probability p (value and
/// mask both set to 0). Entries already masked stay masked.
void apply_input_dropout(TransitionBatch& batch, const ModelDims& dims, double p, std::mt19937_64& rng);

/// The per-sample diffusion step and noise of one training batch.
struct BatchDraws {
  std::vector<int> taus;
  Eigen::MatrixXd eps;
};

BatchDraws draw_batch(std::size_t batch, int state_dim, int steps, std::mt19937_64& rng);

/// Noise-regression loss for given draws and its parameter gradient.
double batch_loss_and_gradient(const TransitionBatch& batch, const BatchDraws& draws, const ModelParams& params,
                               const NoiseSchedule& schedule, ModelParams& grad);
double batch_loss(const TransitionBatch& batch, const BatchDraws& draws, const ModelParams& params,
                  const NoiseSchedule& schedule);

class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8);

  void step(std::span<double> params, std::span<const double> grad);
  void set_learning_rate(double lr) noexcept { lr_ = lr; }
  double learning_rate() const noexcept { return lr_; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double epsilon_;
  long long t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

/// One training run: owns the params, optimizer state and random stream.
class Trainer {
 public:
  Trainer(ModelParams initial, const TrainConfig& config);

  /// Draws tau and eps per sample, applies input dropout, takes one optimizer
  /// step and returns the batch loss before the update.
  double train_step(std::span<const TransitionSample> batch);

  const ModelParams& params() const noexcept { return params_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }
  std::mt19937_64& rng() noexcept { return rng_; }
  int steps_taken() const noexcept { return steps_; }
  /// Rate used by the most recent step.
  double learning_rate() const noexcept { return optimizer_.learning_rate(); }

 private:
  TrainConfig config_;
  NoiseSchedule schedule_;
  ModelParams params_;
  ModelParams grad_;
  AdamOptimizer optimizer_;
  std::mt19937_64 rng_;
  int steps_ = 0;
};

struct LossPoint {
  int step;
  double train_loss;       // mean batch loss since the previous point
  double validation_loss;  // fixed-draw loss on held-out transitions
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossPoint> curve;
  double final_train_loss = 0.0;       // fixed-draw loss on (a subset of) training transitions
  double final_validation_loss = 0.0;  // fixed-draw loss on held-out transitions
  std::size_t train_transitions = 0;
  std::size_t validation_transitions = 0;
};

/// Fits normalization on the table's observed entries, extracts transitions,
/// holds out a validation split and runs the configured number of steps.
TrainResult train(const TimeSeriesTable& table, const TrainConfig& config);

void write_loss_curve(std::ostream& out, const std::vector<LossPoint>& curve);
void save_loss_curve(const std::string& path, const std::vector<LossPoint>& curve);

}  // namespace stdiff
