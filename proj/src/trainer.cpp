#include "stdiff/trainer.hpp"

#include "stdiff/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>

#include <fmt/core.h>

namespace stdiff {

namespace {

Eigen::MatrixXd noisy_states(const Eigen::MatrixXd& x_next, const BatchDraws& draws, const NoiseSchedule& schedule) {
  if (static_cast<Eigen::Index>(draws.taus.size()) != x_next.cols() || draws.eps.cols() != x_next.cols() ||
      draws.eps.rows() != x_next.rows()) {
    throw Error(ErrorKind::shape, "draws do not match the batch");
  }
  Eigen::MatrixXd out(x_next.rows(), x_next.cols());
  for (Eigen::Index b = 0; b < x_next.cols(); ++b) {
    out.col(b) = forward_noise(x_next.col(b), draws.taus[b], draws.eps.col(b), schedule);
  }
  return out;
}

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

// A set of transitions with (tau, eps) drawn once, so the loss is comparable
// across evaluation points.
struct FixedEvaluation {
  TransitionBatch batch;
  BatchDraws draws;
};

FixedEvaluation make_evaluation(const std::vector<TransitionSample>& samples, std::span<const std::size_t> indices,
                                int draws_per_sample, int steps, std::mt19937_64& rng) {
  std::vector<TransitionSample> picked;
  picked.reserve(indices.size() * static_cast<std::size_t>(draws_per_sample));
  for (int d = 0; d < draws_per_sample; ++d) {
    for (const auto i : indices) picked.push_back(samples[i]);
  }
  FixedEvaluation ev;
  ev.batch = stack_batch(picked);
  ev.draws = draw_batch(picked.size(), static_cast<int>(ev.batch.x_next.rows()), steps, rng);
  return ev;
}

double evaluate(const FixedEvaluation& ev, const ModelParams& params, const NoiseSchedule& schedule) {
  if (ev.batch.x_next.cols() == 0) return std::numeric_limits<double>::quiet_NaN();
  return batch_loss(ev.batch, ev.draws, params, schedule);
}

}  // namespace

void TrainConfig::validate() const {
  static_cast<void>(NoiseSchedule(schedule));
  architecture.validate();
  if (batch_size < 1) throw Error(ErrorKind::parameter, "batch size must be positive");
  if (steps < 0) throw Error(ErrorKind::parameter, "step count must be >= 0");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::parameter, "learning rate must be positive");
  if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0)) {
    throw Error(ErrorKind::parameter, "final learning-rate fraction must lie in [0, 1]");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorKind::parameter, "dropout must lie in [0, 1)");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw Error(ErrorKind::parameter, "validation fraction must lie in [0, 1)");
  }
  if (eval_interval < 1 || eval_draws < 1) throw Error(ErrorKind::parameter, "evaluation settings must be positive");
}

ConditioningContext TransitionSample::context() const {
  return ConditioningContext::make(x_prev, control, exogenous, covariate_mask);
}

std::vector<TransitionSample> extract_transitions(const TimeSeriesTable& table) {
  const auto states = table.state_channels();
  const auto controls = table.channels_with_role(ChannelRole::control);
  const auto exo = table.channels_with_role(ChannelRole::exogenous);
  auto state_observed = [&](std::size_t r) {
    return std::all_of(states.begin(), states.end(), [&](int c) { return table.observed(r, static_cast<std::size_t>(c)); });
  };
  auto read_states = [&](std::size_t r) {
    StateVector v(static_cast<Eigen::Index>(states.size()));
    for (std::size_t i = 0; i < states.size(); ++i) v(static_cast<Eigen::Index>(i)) = table.value(r, static_cast<std::size_t>(states[i]));
    return v;
  };

  std::vector<TransitionSample> out;
  for (std::size_t t = 1; t < table.length(); ++t) {
    if (!state_observed(t - 1) || !state_observed(t)) continue;
    TransitionSample s;
    s.x_prev = read_states(t - 1);
    s.x_next = read_states(t);
    s.row = t;
    s.control.resize(static_cast<Eigen::Index>(controls.size()));
    s.exogenous.resize(static_cast<Eigen::Index>(exo.size()));
    s.covariate_mask.resize(static_cast<Eigen::Index>(controls.size() + exo.size()));
    Eigen::Index m = 0;
    for (std::size_t i = 0; i < controls.size(); ++i, ++m) {
      const bool obs = table.observed(t, static_cast<std::size_t>(controls[i]));
      s.control(static_cast<Eigen::Index>(i)) = obs ? table.value(t, static_cast<std::size_t>(controls[i])) : 0.0;
      s.covariate_mask(m) = obs ? 1.0 : 0.0;
    }
    for (std::size_t i = 0; i < exo.size(); ++i, ++m) {
      const bool obs = table.observed(t, static_cast<std::size_t>(exo[i]));
      s.exogenous(static_cast<Eigen::Index>(i)) = obs ? table.value(t, static_cast<std::size_t>(exo[i])) : 0.0;
      s.covariate_mask(m) = obs ? 1.0 : 0.0;
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw Error(ErrorKind::empty_dataset, "no transition has fully observed states at both ends");
  return out;
}

TransitionBatch stack_batch(std::span<const TransitionSample> samples) {
  TransitionBatch batch;
  if (samples.empty()) return batch;
  const auto& first = samples.front();
  const Eigen::Index rows = first.x_prev.size() + first.control.size() + first.exogenous.size() + first.covariate_mask.size();
  batch.features.resize(rows, static_cast<Eigen::Index>(samples.size()));
  batch.x_next.resize(first.x_next.size(), static_cast<Eigen::Index>(samples.size()));
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const auto col = static_cast<Eigen::Index>(b);
    batch.features.col(col) = samples[b].context().features();
    batch.x_next.col(col) = samples[b].x_next;
  }
  return batch;
}

void apply_input_dropout(TransitionBatch& batch, const ModelDims& dims, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return;
  const int nc = dims.covariate_dim();
  std::bernoulli_distribution drop(p);
  for (Eigen::Index b = 0; b < batch.features.cols(); ++b) {
    for (int j = 0; j < nc; ++j) {
      if (drop(rng)) {
        batch.features(dims.state_dim + j, b) = 0.0;
        batch.features(dims.state_dim + nc + j, b) = 0.0;
      }
    }
  }
}

BatchDraws draw_batch(std::size_t batch, int state_dim, int steps, std::mt19937_64& rng) {
  BatchDraws draws;
  std::uniform_int_distribution<int> tau(1, steps);
  std::normal_distribution<double> normal(0.0, 1.0);
  draws.taus.resize(batch);
  for (auto& t : draws.taus) t = tau(rng);
  draws.eps.resize(state_dim, static_cast<Eigen::Index>(batch));
  for (Eigen::Index b = 0; b < draws.eps.cols(); ++b) {
    for (Eigen::Index i = 0; i < draws.eps.rows(); ++i) draws.eps(i, b) = normal(rng);
  }
  return draws;
}

double batch_loss_and_gradient(const TransitionBatch& batch, const BatchDraws& draws, const ModelParams& params,
                               const NoiseSchedule& schedule, ModelParams& grad) {
  const Eigen::MatrixXd x_noisy = noisy_states(batch.x_next, draws, schedule);
  return loss_and_gradient(x_noisy, draws.taus, batch.features, draws.eps, params, grad);
}

double batch_loss(const TransitionBatch& batch, const BatchDraws& draws, const ModelParams& params,
                  const NoiseSchedule& schedule) {
  const Eigen::MatrixXd x_noisy = noisy_states(batch.x_next, draws, schedule);
  return noise_prediction_loss(draws.eps, predict_noise_batch(x_noisy, draws.taus, batch.features, params));
}

AdamOptimizer::AdamOptimizer(std::size_t size, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon), m_(size, 0.0), v_(size, 0.0) {}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw Error(ErrorKind::shape, "optimizer state size does not match the params");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + epsilon_);
  }
}

Trainer::Trainer(ModelParams initial, const TrainConfig& config)
    : config_(config),
      schedule_(config.schedule),
      params_(std::move(initial)),
      grad_(params_.dims()),
      optimizer_(params_.size(), config.learning_rate),
      rng_(derived_rng(config.seed, 2)) {
  config.validate();
}

double Trainer::train_step(std::span<const TransitionSample> batch) {
  if (batch.empty()) throw Error(ErrorKind::empty_dataset, "training batch is empty");
  const auto& dims = params_.dims();
  const BatchDraws draws = draw_batch(batch.size(), dims.state_dim, schedule_.steps(), rng_);
  TransitionBatch stacked = stack_batch(batch);
  if (stacked.features.rows() != dims.context_input_dim() || stacked.x_next.rows() != dims.state_dim) {
    throw Error(ErrorKind::shape, "transition dims do not match the model");
  }
  apply_input_dropout(stacked, dims, config_.dropout, rng_);
  const double loss = batch_loss_and_gradient(stacked, draws, params_, schedule_, grad_);
  if (!std::isfinite(loss)) {
    double max_weight = 0.0;
    for (const double w : params_.weights()) max_weight = std::max(max_weight, std::abs(w));
    throw Error(ErrorKind::training_diverged,
                fmt::format("loss {} at step {} (max |weight| {:.3g}, learning rate {})", loss, steps_ + 1,
                            max_weight, config_.learning_rate));
  }
  if (config_.final_lr_fraction < 1.0 && config_.steps > 0) {
    const double progress = std::min(1.0, static_cast<double>(steps_) / config_.steps);
    const double f = config_.final_lr_fraction;
    optimizer_.set_learning_rate(config_.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));
  }
  optimizer_.step(params_.weights(), grad_.weights());
  ++steps_;
  return loss;
}

TrainResult train(const TimeSeriesTable& table, const TrainConfig& config) {
  config.validate();
  const ZScoreStats stats = zscore_fit(table);
  const TimeSeriesTable normalized = zscore_apply(table, stats);
  const auto transitions = extract_transitions(normalized);

  std::vector<std::size_t> order(transitions.size());
  std::iota(order.begin(), order.end(), 0);
  auto split_rng = derived_rng(config.seed, 1);
  std::shuffle(order.begin(), order.end(), split_rng);
  std::size_t n_val = static_cast<std::size_t>(config.validation_fraction * static_cast<double>(order.size()));
  if (n_val >= order.size()) n_val = order.size() - 1;
  const std::span<const std::size_t> val_idx(order.data(), n_val);
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(train_idx.begin(), train_idx.end());

  const ModelDims dims = data_dims(table, config.architecture);
  Trainer trainer(init_params(config.seed, dims), config);

  auto eval_rng = derived_rng(config.seed, 3);
  const FixedEvaluation val_eval = make_evaluation(transitions, val_idx, config.eval_draws, config.schedule.steps, eval_rng);
  const std::size_t n_train_eval = std::min<std::size_t>(train_idx.size(), 1024);
  const FixedEvaluation train_eval = make_evaluation(
      transitions, std::span<const std::size_t>(train_idx.data(), n_train_eval), config.eval_draws,
      config.schedule.steps, eval_rng);

  TrainResult result{Checkpoint{trainer.params(), config.schedule, stats, table.channels()}, {}, 0.0, 0.0,
                     train_idx.size(), n_val};

  std::uniform_int_distribution<std::size_t> pick(0, train_idx.size() - 1);
  std::vector<TransitionSample> batch(static_cast<std::size_t>(config.batch_size));
  double window_sum = 0.0;
  int window_count = 0;
  for (int step = 1; step <= config.steps; ++step) {
    for (auto& sample : batch) sample = transitions[train_idx[pick(trainer.rng())]];
    window_sum += trainer.train_step(batch);
    ++window_count;
    if (step % config.eval_interval == 0 || step == config.steps) {
      result.curve.push_back({step, window_sum / window_count, evaluate(val_eval, trainer.params(), trainer.schedule())});
      window_sum = 0.0;
      window_count = 0;
    }
  }

  result.checkpoint.params = trainer.params();
  result.final_train_loss = evaluate(train_eval, trainer.params(), trainer.schedule());
  result.final_validation_loss = evaluate(val_eval, trainer.params(), trainer.schedule());
  return result;
}

void write_loss_curve(std::ostream& out, const std::vector<LossPoint>& curve) {
  out << "step,train_loss,validation_loss\n";
  for (const auto& p : curve) {
    out << p.step << ',' << format_double(p.train_loss) << ',' << format_double(p.validation_loss) << '\n';
  }
}

void save_loss_curve(const std::string& path, const std::vector<LossPoint>& curve) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, fmt::format("cannot write '{}'", path));
  write_loss_curve(out, curve);
}

}  // namespace stdiff
