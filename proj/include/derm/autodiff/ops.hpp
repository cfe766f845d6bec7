#pragma once

#include <vector>

#include "derm/autodiff/graph.hpp"

/// Differentiable operations. Every function evaluates its forward value
/// immediately and records a backward rule on the graph.
///
/// Layout conventions: images are NCHW, convolution kernels are
/// [out, in, kh, kw] for conv2d and [in, out, kh, kw] for conv_transpose2d
/// (so one kernel tensor drives a convolution and its adjoint), dense weights
/// are [out, in].
namespace derm::ad {

template <typename Scalar>
Var conv2d(Graph<Scalar>& g, Var input, Var kernel, int stride, int padding);

/// Adjoint of conv2d with the same kernel. Output spatial size is
/// (H - 1) * stride - 2 * padding + kh.
template <typename Scalar>
Var conv_transpose2d(Graph<Scalar>& g, Var input, Var kernel, int stride, int padding);

/// input [N, D] * weight[M, D]^T + bias[M].
template <typename Scalar>
Var dense(Graph<Scalar>& g, Var input, Var weight, Var bias);

enum class ActivationKind { relu, leaky_relu, tanh, sigmoid };

struct Activation {
  ActivationKind kind = ActivationKind::relu;
  double alpha = 0.2;  // leaky_relu slope for x < 0

  static Activation relu() { return {ActivationKind::relu, 0.0}; }
  static Activation leaky_relu(double alpha) { return {ActivationKind::leaky_relu, alpha}; }
  static Activation tanh() { return {ActivationKind::tanh, 0.0}; }
  static Activation sigmoid() { return {ActivationKind::sigmoid, 0.0}; }
};

template <typename Scalar>
Var activation(Graph<Scalar>& g, Var input, Activation kind);

enum class BatchNormMode { train, eval };

/// Running statistics owned by the layer, updated in train mode.
template <typename Scalar>
struct BatchNormStats {
  ArrayX<Scalar> running_mean;
  ArrayX<Scalar> running_var;

  static BatchNormStats init(Index channels) {
    return {ArrayX<Scalar>::Zero(channels), ArrayX<Scalar>::Ones(channels)};
  }
};

/// Per-channel normalization over [N, C, ...]. Train mode normalizes by the
/// biased batch variance and folds the unbiased variance into the running
/// estimate: running = (1 - momentum) * running + momentum * batch.
template <typename Scalar>
Var batch_norm(Graph<Scalar>& g, Var input, Var gamma, Var beta, BatchNormStats<Scalar>& stats,
               BatchNormMode mode, double momentum = 0.1, double epsilon = 1e-5);

/// Row-wise softmax of [N, K], K >= 2.
template <typename Scalar>
Var softmax(Graph<Scalar>& g, Var input);

/// Mean over rows of -log p(correct class), with p clamped at 1e-12.
/// `labels` is a one-hot [N, K] tensor; `probs` rows must sum to 1.
template <typename Scalar>
Var cross_entropy(Graph<Scalar>& g, Var probs, const Tensor<Scalar>& labels);

inline constexpr double kLogFloor = 1e-12;

struct WganLosses {
  Var critic;     // mean(fake) - mean(real)
  Var generator;  // -mean(fake)
};

template <typename Scalar>
WganLosses wgan_losses(Graph<Scalar>& g, Var critic_real, Var critic_fake);

/// Identity forward; scales the incoming gradient by -lambda.
template <typename Scalar>
Var grad_reverse(Graph<Scalar>& g, Var input, double lambda);

// Structural helpers.

/// x[N, C, ...] + bias[C] broadcast over the trailing dims.
template <typename Scalar>
Var add_channel_bias(Graph<Scalar>& g, Var input, Var bias);

/// [N, C, H, W] -> [N, C] spatial mean.
template <typename Scalar>
Var global_avg_pool(Graph<Scalar>& g, Var input);

template <typename Scalar>
Var reshape(Graph<Scalar>& g, Var input, Shape shape);

/// Gathers rows (first-axis slices) in the given order.
template <typename Scalar>
Var select_rows(Graph<Scalar>& g, Var input, const std::vector<Index>& rows);

template <typename Scalar>
Var add(Graph<Scalar>& g, Var a, Var b);

template <typename Scalar>
Var sub(Graph<Scalar>& g, Var a, Var b);

template <typename Scalar>
Var scale(Graph<Scalar>& g, Var input, double factor);

template <typename Scalar>
Var sum(Graph<Scalar>& g, Var input);

template <typename Scalar>
Var mean(Graph<Scalar>& g, Var input);

/// Output spatial extent of a convolution; throws DimensionError when the
/// window does not fit.
Index conv_output_extent(Index input, Index kernel, int stride, int padding);

}  // namespace derm::ad
