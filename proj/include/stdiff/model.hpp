#pragma once

#include "stdiff/diffusion.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace stdiff {

/// Architecture of the context encoder and the residual noise predictor.
/// The data dimensions come from the table; the rest are model size knobs.
struct ModelDims {
  int state_dim = 1;
  int control_dim = 0;
  int exogenous_dim = 0;
  int time_embed_dim = 64;
  int context_dim = 64;
  int encoder_width = 64;
  int encoder_layers = 2;
  int predictor_width = 128;
  int predictor_blocks = 3;

  int covariate_dim() const noexcept { return control_dim + exogenous_dim; }
  /// x_prev, covariate values, covariate mask.
  int context_input_dim() const noexcept { return state_dim + 2 * covariate_dim(); }
  void validate() const;
  std::string describe_data_dims() const;

  bool operator==(const ModelDims&) const = default;
};

/// Sinusoidal features of a diffusion step: [sin(tau/10000^(2i/E)), cos(...)] pairs.
Eigen::VectorXd embed_timestep(int tau, int dim);

/// The conditioning tuple for one transition. Masked covariates hold zero.
struct ConditioningContext {
  StateVector x_prev;
  Eigen::VectorXd control;
  Eigen::VectorXd exogenous;
  Eigen::VectorXd covariate_mask;

  /// Builds a context, zeroing every covariate whose mask entry is 0.
  static ConditioningContext make(StateVector x_prev, Eigen::VectorXd control,
                                  Eigen::VectorXd exogenous, Eigen::VectorXd covariate_mask);

  /// Encoder input: [x_prev, control, exogenous, covariate_mask].
  Eigen::VectorXd features() const;
};

/// All learnable weights in one contiguous buffer; layer views are carved out
/// of it by a layout that depends only on the dims.
class ModelParams {
 public:
  struct Dense {
    Eigen::Map<const Eigen::MatrixXd> weight;
    Eigen::Map<const Eigen::VectorXd> bias;
  };
  struct MutableDense {
    Eigen::Map<Eigen::MatrixXd> weight;
    Eigen::Map<Eigen::VectorXd> bias;
  };

  explicit ModelParams(const ModelDims& dims);

  const ModelDims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return weights_.size(); }
  std::span<double> weights() noexcept { return weights_; }
  std::span<const double> weights() const noexcept { return weights_; }

  /// Layer order: encoder hidden layers, encoder output, predictor input,
  /// (block inner, block outer) per residual block, predictor output.
  std::size_t layer_count() const noexcept { return layout_.size(); }
  Dense layer(std::size_t i) const;
  MutableDense layer(std::size_t i);

  std::size_t encoder_layer(int i) const { return static_cast<std::size_t>(i); }
  std::size_t encoder_output() const { return static_cast<std::size_t>(dims_.encoder_layers); }
  std::size_t predictor_input() const { return encoder_output() + 1; }
  std::size_t block_inner(int j) const { return predictor_input() + 1 + 2 * static_cast<std::size_t>(j); }
  std::size_t block_outer(int j) const { return block_inner(j) + 1; }
  std::size_t predictor_output() const { return predictor_input() + 1 + 2 * static_cast<std::size_t>(dims_.predictor_blocks); }

  bool all_finite() const;
  bool operator==(const ModelParams& other) const;

 private:
  struct Slot {
    Eigen::Index rows;
    Eigen::Index cols;
    std::size_t offset;
  };

  ModelDims dims_;
  std::vector<Slot> layout_;
  // Max-aligned so vectorized kernels peel the same way on every allocation,
  // which keeps results bit-identical across runs.
  std::vector<double, Eigen::aligned_allocator<double>> weights_;
};

/// Fan-in scaled uniform initialization; the output layer starts near zero so
/// the untrained predictor returns almost nothing.
ModelParams init_params(std::uint64_t seed, const ModelDims& dims);

/// Context encoder over a batch of feature columns (context_input_dim x B).
Eigen::MatrixXd encode_contexts(const Eigen::MatrixXd& features, const ModelParams& params);
Eigen::VectorXd encode_context(const ConditioningContext& ctx, const ModelParams& params);

/// Noise predictor over a batch. `taus` holds one diffusion step per column.
Eigen::MatrixXd predict_noise_batch(const Eigen::MatrixXd& x_noisy, std::span<const int> taus,
                                    const Eigen::MatrixXd& features, const ModelParams& params);
StateVector predict_noise(const StateVector& x_noisy, int tau, const ConditioningContext& ctx,
                          const ModelParams& params);

/// Mean noise-prediction loss over the batch and its gradient with respect to
/// every parameter (written into `grad`, which must share the dims).
double loss_and_gradient(const Eigen::MatrixXd& x_noisy, std::span<const int> taus,
                         const Eigen::MatrixXd& features, const Eigen::MatrixXd& eps,
                         const ModelParams& params, ModelParams& grad);

/// Reverse-chain interface used by the imputer. Implementations may cache
/// per-context work between `bind_context` and the T calls to `predict`.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual int state_dim() const = 0;
  virtual void bind_context(const Eigen::MatrixXd& features) = 0;
  virtual Eigen::MatrixXd predict(const Eigen::MatrixXd& x_noisy, int tau) = 0;
};

/// Fast inference path for trained params: the encoder and the context and
/// timestep contributions to each block are computed once per bound context.
class ModelPredictor final : public NoisePredictor {
 public:
  ModelPredictor(const ModelParams& params, int steps);

  int state_dim() const override { return params_.dims().state_dim; }
  void bind_context(const Eigen::MatrixXd& features) override;
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x_noisy, int tau) override;

 private:
  const ModelParams& params_;
  // Per block: inner-layer timestep contribution for every tau (width x T).
  std::vector<Eigen::MatrixXd> time_terms_;
  Eigen::MatrixXd input_time_terms_;
  std::vector<Eigen::MatrixXd> context_terms_;
  Eigen::MatrixXd input_context_terms_;
};

}  // namespace stdiff
