#pragma once

#include "tensor.hpp"

#include <span>
#include <vector>

// Pure forward kernels. The differentiable ops in autodiff.hpp call these and
// add the matching reverse-mode rules.
namespace ccn::kernels {

inline constexpr double layer_norm_eps = 1e-5;

// out[b,o,t] = bias[o] + sum_i weight[o,i] x[b,i,t]
template <typename Scalar>
auto pointwise_conv(Tensor3<Scalar> const &x, Matrix<Scalar> const &weight, Vector<Scalar> const &bias)
  -> Tensor3<Scalar>;

// Same contract as pointwise_conv, evaluated as a per-timestep dense layer.
template <typename Scalar>
auto linear_per_timestep(Tensor3<Scalar> const &x, Matrix<Scalar> const &weight, Vector<Scalar> const &bias)
  -> Tensor3<Scalar>;

// Grouped (groups == channels) valid convolution; weight is channels x K.
template <typename Scalar>
auto depthwise_temporal_conv(Tensor3<Scalar> const &x, Matrix<Scalar> const &weight, Vector<Scalar> const &bias)
  -> Tensor3<Scalar>;

// Full valid convolution; weight is out x (in * K) with [in][k] column order.
template <typename Scalar>
auto temporal_conv(Tensor3<Scalar> const &x, Matrix<Scalar> const &weight, Vector<Scalar> const &bias)
  -> Tensor3<Scalar>;

// Normalizes over channels at every (batch, time) position.
template <typename Scalar>
auto layer_norm(Tensor3<Scalar> const &x,
                Vector<Scalar> const  &gamma,
                Vector<Scalar> const  &beta,
                double                 eps = layer_norm_eps) -> Tensor3<Scalar>;

template <typename Scalar> auto leaky_relu(Tensor3<Scalar> const &x, Scalar slope) -> Tensor3<Scalar>;

// Prepends `amount` zeros on the time axis.
template <typename Scalar> auto causal_pad(Tensor3<Scalar> const &x, Index amount) -> Tensor3<Scalar>;

template <typename Scalar> auto concat_channels(std::span<Tensor3<Scalar> const *const> parts) -> Tensor3<Scalar>;
template <typename Scalar> auto concat_channels(std::vector<Tensor3<Scalar>> const &parts) -> Tensor3<Scalar>;

template <typename Scalar> auto slice_channels(Tensor3<Scalar> const &x, Index first, Index count) -> Tensor3<Scalar>;

// Softmax over channels of (weight * time-mean(x) + bias), one row per batch item.
template <typename Scalar>
auto attention_scores(Tensor3<Scalar> const &x, Matrix<Scalar> const &weight, Vector<Scalar> const &bias)
  -> Matrix<Scalar>;

// out[b,c,t] = H * score[b,c] * x[b,c,t]
template <typename Scalar>
auto spatial_attention(Tensor3<Scalar> const &x, Matrix<Scalar> const &weight, Vector<Scalar> const &bias)
  -> Tensor3<Scalar>;

} // namespace ccn::kernels
