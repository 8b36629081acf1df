#include "stdiff/model.hpp"

#include "stdiff/errors.hpp"

#include <cmath>
#include <random>

#include <fmt/core.h>

namespace stdiff {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd silu(const MatrixXd& x) {
  return (x.array() / (1.0 + (-x.array()).exp())).matrix();
}

MatrixXd silu_grad(const MatrixXd& x) {
  const Eigen::ArrayXXd s = 1.0 / (1.0 + (-x.array()).exp());
  return (s * (1.0 + x.array() * (1.0 - s))).matrix();
}

MatrixXd embed_timesteps(std::span<const int> taus, int dim) {
  MatrixXd out(dim, static_cast<Eigen::Index>(taus.size()));
  for (std::size_t b = 0; b < taus.size(); ++b) out.col(static_cast<Eigen::Index>(b)) = embed_timestep(taus[b], dim);
  return out;
}

void check_features(const ModelDims& dims, const MatrixXd& features) {
  if (features.rows() != dims.context_input_dim()) {
    throw Error(ErrorKind::shape, fmt::format("context features have {} rows, model expects {}",
                                              features.rows(), dims.context_input_dim()));
  }
}

// Forward activations kept for the backward pass.
struct Trace {
  std::vector<MatrixXd> enc_in;   // input to each encoder hidden layer
  std::vector<MatrixXd> enc_pre;  // pre-activations of encoder hidden layers
  MatrixXd enc_last;              // input to encoder output layer
  MatrixXd context;               // c_emb
  MatrixXd time;                  // timestep embeddings
  MatrixXd pred_in;               // [x; c; t]
  std::vector<MatrixXd> h;        // residual stream before each block, plus final
  std::vector<MatrixXd> block_in; // [silu(h); c; t]
  std::vector<MatrixXd> block_pre;
  std::vector<MatrixXd> block_act;
  MatrixXd out_act;               // silu(h_final)
  MatrixXd output;
};

MatrixXd stack3(const MatrixXd& a, const MatrixXd& b, const MatrixXd& c) {
  MatrixXd out(a.rows() + b.rows() + c.rows(), a.cols());
  out << a, b, c;
  return out;
}

MatrixXd affine(const ModelParams::Dense& layer, const MatrixXd& in) {
  MatrixXd out = layer.weight * in;
  out.colwise() += layer.bias;
  return out;
}

MatrixXd run_encoder(const ModelParams& params, const MatrixXd& features, Trace* trace) {
  const auto& dims = params.dims();
  MatrixXd act = features;
  for (int l = 0; l < dims.encoder_layers; ++l) {
    MatrixXd pre = affine(params.layer(params.encoder_layer(l)), act);
    MatrixXd next = silu(pre);
    if (trace) {
      trace->enc_in.push_back(std::move(act));
      trace->enc_pre.push_back(std::move(pre));
    }
    act = std::move(next);
  }
  MatrixXd context = affine(params.layer(params.encoder_output()), act);
  if (trace) trace->enc_last = std::move(act);
  return context;
}

MatrixXd run_forward(const ModelParams& params, const MatrixXd& x_noisy, std::span<const int> taus,
                     const MatrixXd& features, Trace* trace) {
  const auto& dims = params.dims();
  if (x_noisy.rows() != dims.state_dim) {
    throw Error(ErrorKind::shape, fmt::format("noisy state has {} rows, model expects {}",
                                              x_noisy.rows(), dims.state_dim));
  }
  check_features(dims, features);
  if (features.cols() != x_noisy.cols() || static_cast<Eigen::Index>(taus.size()) != x_noisy.cols()) {
    throw Error(ErrorKind::shape, fmt::format("batch mismatch: {} states, {} contexts, {} steps",
                                              x_noisy.cols(), features.cols(), taus.size()));
  }

  MatrixXd context = run_encoder(params, features, trace);
  MatrixXd time = embed_timesteps(taus, dims.time_embed_dim);
  MatrixXd pred_in = stack3(x_noisy, context, time);
  MatrixXd h = affine(params.layer(params.predictor_input()), pred_in);
  if (trace) trace->h.push_back(h);
  for (int j = 0; j < dims.predictor_blocks; ++j) {
    MatrixXd block_in = stack3(silu(h), context, time);
    MatrixXd pre = affine(params.layer(params.block_inner(j)), block_in);
    MatrixXd act = silu(pre);
    h += affine(params.layer(params.block_outer(j)), act);
    if (trace) {
      trace->block_in.push_back(std::move(block_in));
      trace->block_pre.push_back(std::move(pre));
      trace->block_act.push_back(std::move(act));
      trace->h.push_back(h);
    }
  }
  MatrixXd out_act = silu(h);
  MatrixXd output = affine(params.layer(params.predictor_output()), out_act);
  if (trace) {
    trace->context = std::move(context);
    trace->time = std::move(time);
    trace->pred_in = std::move(pred_in);
    trace->out_act = std::move(out_act);
    trace->output = output;
  }
  return output;
}

void accumulate_dense(ModelParams::MutableDense g, const MatrixXd& upstream, const MatrixXd& input) {
  g.weight.noalias() += upstream * input.transpose();
  g.bias += upstream.rowwise().sum();
}

}  // namespace

void ModelDims::validate() const {
  if (state_dim < 1 || control_dim < 0 || exogenous_dim < 0) {
    throw Error(ErrorKind::parameter, fmt::format("invalid data dims {}", describe_data_dims()));
  }
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
    throw Error(ErrorKind::parameter,
                fmt::format("timestep embedding size must be even and >= 2, got {}", time_embed_dim));
  }
  if (context_dim < 1 || encoder_width < 1 || encoder_layers < 0 || predictor_width < 1 ||
      predictor_blocks < 0) {
    throw Error(ErrorKind::parameter, "model sizes must be positive");
  }
}

std::string ModelDims::describe_data_dims() const {
  return fmt::format("(D_x={}, D_u={}, D_w={})", state_dim, control_dim, exogenous_dim);
}

Eigen::VectorXd embed_timestep(int tau, int dim) {
  if (dim < 2 || dim % 2 != 0) {
    throw Error(ErrorKind::parameter, fmt::format("embedding size must be even, got {}", dim));
  }
  if (tau < 0) throw Error(ErrorKind::parameter, fmt::format("negative diffusion step {}", tau));
  VectorXd out(dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    out(2 * i) = std::sin(tau * freq);
    out(2 * i + 1) = std::cos(tau * freq);
  }
  return out;
}

ConditioningContext ConditioningContext::make(StateVector x_prev, Eigen::VectorXd control,
                                              Eigen::VectorXd exogenous,
                                              Eigen::VectorXd covariate_mask) {
  if (covariate_mask.size() != control.size() + exogenous.size()) {
    throw Error(ErrorKind::shape, fmt::format("covariate mask has {} entries for {} covariates",
                                              covariate_mask.size(), control.size() + exogenous.size()));
  }
  for (Eigen::Index i = 0; i < control.size(); ++i) {
    if (covariate_mask(i) == 0.0) control(i) = 0.0;
  }
  for (Eigen::Index i = 0; i < exogenous.size(); ++i) {
    if (covariate_mask(control.size() + i) == 0.0) exogenous(i) = 0.0;
  }
  return {std::move(x_prev), std::move(control), std::move(exogenous), std::move(covariate_mask)};
}

Eigen::VectorXd ConditioningContext::features() const {
  VectorXd out(x_prev.size() + control.size() + exogenous.size() + covariate_mask.size());
  Eigen::Index at = 0;
  for (const VectorXd* part : {&x_prev, &control, &exogenous, &covariate_mask}) {
    out.segment(at, part->size()) = *part;
    at += part->size();
  }
  return out;
}

ModelParams::ModelParams(const ModelDims& dims) : dims_(dims) {
  dims.validate();
  std::size_t offset = 0;
  auto add = [&](Eigen::Index rows, Eigen::Index cols) {
    layout_.push_back({rows, cols, offset});
    offset += static_cast<std::size_t>(rows * cols + rows);
  };
  Eigen::Index in = dims.context_input_dim();
  for (int l = 0; l < dims.encoder_layers; ++l) {
    add(dims.encoder_width, in);
    in = dims.encoder_width;
  }
  add(dims.context_dim, in);
  const int width = dims.predictor_width;
  add(width, dims.state_dim + dims.context_dim + dims.time_embed_dim);
  for (int j = 0; j < dims.predictor_blocks; ++j) {
    add(width, width + dims.context_dim + dims.time_embed_dim);
    add(width, width);
  }
  add(dims.state_dim, width);
  weights_.assign(offset, 0.0);
}

ModelParams::Dense ModelParams::layer(std::size_t i) const {
  const auto& s = layout_.at(i);
  const double* base = weights_.data() + s.offset;
  return {Eigen::Map<const MatrixXd>(base, s.rows, s.cols),
          Eigen::Map<const VectorXd>(base + s.rows * s.cols, s.rows)};
}

ModelParams::MutableDense ModelParams::layer(std::size_t i) {
  const auto& s = layout_.at(i);
  double* base = weights_.data() + s.offset;
  return {Eigen::Map<MatrixXd>(base, s.rows, s.cols), Eigen::Map<VectorXd>(base + s.rows * s.cols, s.rows)};
}

bool ModelParams::all_finite() const {
  for (const double w : weights_) {
    if (!std::isfinite(w)) return false;
  }
  return true;
}

bool ModelParams::operator==(const ModelParams& other) const {
  return dims_ == other.dims_ && weights_ == other.weights_;
}

ModelParams init_params(std::uint64_t seed, const ModelDims& dims) {
  ModelParams params(dims);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < params.layer_count(); ++i) {
    auto layer = params.layer(i);
    double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    if (i == params.predictor_output()) bound *= 0.01;
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index k = 0; k < layer.weight.size(); ++k) layer.weight.data()[k] = dist(rng);
    layer.bias.setZero();
  }
  return params;
}

Eigen::MatrixXd encode_contexts(const Eigen::MatrixXd& features, const ModelParams& params) {
  check_features(params.dims(), features);
  return run_encoder(params, features, nullptr);
}

Eigen::VectorXd encode_context(const ConditioningContext& ctx, const ModelParams& params) {
  return encode_contexts(ctx.features(), params).col(0);
}

Eigen::MatrixXd predict_noise_batch(const Eigen::MatrixXd& x_noisy, std::span<const int> taus,
                                    const Eigen::MatrixXd& features, const ModelParams& params) {
  return run_forward(params, x_noisy, taus, features, nullptr);
}

StateVector predict_noise(const StateVector& x_noisy, int tau, const ConditioningContext& ctx,
                          const ModelParams& params) {
  const int taus[1] = {tau};
  return run_forward(params, x_noisy, taus, ctx.features(), nullptr).col(0);
}

double loss_and_gradient(const Eigen::MatrixXd& x_noisy, std::span<const int> taus,
                         const Eigen::MatrixXd& features, const Eigen::MatrixXd& eps,
                         const ModelParams& params, ModelParams& grad) {
  if (!(grad.dims() == params.dims())) {
    throw Error(ErrorKind::shape, "gradient buffer has different dims than the params");
  }
  if (eps.rows() != x_noisy.rows() || eps.cols() != x_noisy.cols()) {
    throw Error(ErrorKind::shape, "target noise shape differs from noisy state shape");
  }
  Trace tr;
  run_forward(params, x_noisy, taus, features, &tr);
  const auto& dims = params.dims();
  const double batch = static_cast<double>(x_noisy.cols());
  const MatrixXd diff = tr.output - eps;
  const double loss = diff.squaredNorm() / batch;

  std::fill(grad.weights().begin(), grad.weights().end(), 0.0);

  // Output layer.
  MatrixXd d_out = (2.0 / batch) * diff;
  accumulate_dense(grad.layer(params.predictor_output()), d_out, tr.out_act);
  MatrixXd dh = (params.layer(params.predictor_output()).weight.transpose() * d_out).cwiseProduct(
      silu_grad(tr.h.back()));

  const int width = dims.predictor_width;
  const int cdim = dims.context_dim;
  MatrixXd d_context = MatrixXd::Zero(cdim, x_noisy.cols());

  for (int j = dims.predictor_blocks - 1; j >= 0; --j) {
    accumulate_dense(grad.layer(params.block_outer(j)), dh, tr.block_act[j]);
    MatrixXd d_pre = (params.layer(params.block_outer(j)).weight.transpose() * dh)
                         .cwiseProduct(silu_grad(tr.block_pre[j]));
    accumulate_dense(grad.layer(params.block_inner(j)), d_pre, tr.block_in[j]);
    const MatrixXd d_in = params.layer(params.block_inner(j)).weight.transpose() * d_pre;
    dh += d_in.topRows(width).cwiseProduct(silu_grad(tr.h[j]));
    d_context += d_in.middleRows(width, cdim);
  }

  accumulate_dense(grad.layer(params.predictor_input()), dh, tr.pred_in);
  d_context += (params.layer(params.predictor_input()).weight.transpose() * dh)
                   .middleRows(dims.state_dim, cdim);

  // Encoder.
  accumulate_dense(grad.layer(params.encoder_output()), d_context, tr.enc_last);
  MatrixXd d_act = params.layer(params.encoder_output()).weight.transpose() * d_context;
  for (int l = dims.encoder_layers - 1; l >= 0; --l) {
    const MatrixXd d_pre = d_act.cwiseProduct(silu_grad(tr.enc_pre[l]));
    accumulate_dense(grad.layer(params.encoder_layer(l)), d_pre, tr.enc_in[l]);
    if (l > 0) d_act = params.layer(params.encoder_layer(l)).weight.transpose() * d_pre;
  }
  return loss;
}

ModelPredictor::ModelPredictor(const ModelParams& params, int steps) : params_(params) {
  const auto& dims = params.dims();
  if (steps < 1) throw Error(ErrorKind::parameter, "predictor needs at least one diffusion step");
  MatrixXd time(dims.time_embed_dim, steps);
  for (int tau = 1; tau <= steps; ++tau) time.col(tau - 1) = embed_timestep(tau, dims.time_embed_dim);
  const auto input = params.layer(params.predictor_input());
  input_time_terms_ = input.weight.rightCols(dims.time_embed_dim) * time;
  for (int j = 0; j < dims.predictor_blocks; ++j) {
    const auto inner = params.layer(params.block_inner(j));
    time_terms_.push_back(inner.weight.rightCols(dims.time_embed_dim) * time);
  }
}

void ModelPredictor::bind_context(const Eigen::MatrixXd& features) {
  const auto& dims = params_.dims();
  const MatrixXd context = encode_contexts(features, params_);
  const auto input = params_.layer(params_.predictor_input());
  input_context_terms_ = input.weight.middleCols(dims.state_dim, dims.context_dim) * context;
  input_context_terms_.colwise() += input.bias;
  context_terms_.clear();
  for (int j = 0; j < dims.predictor_blocks; ++j) {
    const auto inner = params_.layer(params_.block_inner(j));
    MatrixXd term = inner.weight.middleCols(dims.predictor_width, dims.context_dim) * context;
    term.colwise() += inner.bias;
    context_terms_.push_back(std::move(term));
  }
}

Eigen::MatrixXd ModelPredictor::predict(const Eigen::MatrixXd& x_noisy, int tau) {
  const auto& dims = params_.dims();
  if (x_noisy.cols() != input_context_terms_.cols() || x_noisy.rows() != dims.state_dim) {
    throw Error(ErrorKind::shape, fmt::format("predict got {}x{} states for {} bound contexts",
                                              x_noisy.rows(), x_noisy.cols(), input_context_terms_.cols()));
  }
  if (tau < 1 || tau > input_time_terms_.cols()) {
    throw Error(ErrorKind::parameter, fmt::format("diffusion step {} outside 1..{}", tau, input_time_terms_.cols()));
  }
  const auto input = params_.layer(params_.predictor_input());
  MatrixXd h = input_context_terms_;
  h.noalias() += input.weight.leftCols(dims.state_dim) * x_noisy;
  h.colwise() += input_time_terms_.col(tau - 1);
  const int width = dims.predictor_width;
  MatrixXd pre(width, x_noisy.cols());
  for (int j = 0; j < dims.predictor_blocks; ++j) {
    const auto inner = params_.layer(params_.block_inner(j));
    const auto outer = params_.layer(params_.block_outer(j));
    pre = context_terms_[j];
    pre.noalias() += inner.weight.leftCols(width) * silu(h);
    pre.colwise() += time_terms_[j].col(tau - 1);
    h.noalias() += outer.weight * silu(pre);
    h.colwise() += outer.bias;
  }
  const auto out = params_.layer(params_.predictor_output());
  MatrixXd y = out.weight * silu(h);
  y.colwise() += out.bias;
  return y;
}

}  // namespace stdiff
