#include "ccn/kernels.hpp"

#include <fmt/format.h>

namespace ccn::kernels {

namespace {

template <typename Scalar> void require_channels(Tensor3<Scalar> const &x, Index expected, char const *op)
{
  if (x.channels() != expected) {
    throw ShapeError(fmt::format("{}: input has {} channels, expected {}", op, x.channels(), expected));
  }
}

template <typename Scalar> void require_bias(Vector<Scalar> const &bias, Index expected, char const *op)
{
  if (bias.size() != expected) {
    throw ShapeError(fmt::format("{}: bias has {} entries, expected {}", op, bias.size(), expected));
  }
}

} // namespace

template <typename Scalar>
auto pointwise_conv(Tensor3<Scalar> const &x, Matrix<Scalar> const &weight, Vector<Scalar> const &bias)
  -> Tensor3<Scalar>
{
  require_channels(x, weight.cols(), "pointwise_conv");
  require_bias(bias, weight.rows(), "pointwise_conv");
  Tensor3<Scalar> out(x.batch(), weight.rows(), x.time());
  for (Index b = 0; b < x.batch(); ++b) {
    out.item(b).noalias() = weight * x.item(b);
    out.item(b).colwise() += bias;
  }
  return out;
}

template <typename Scalar>
auto linear_per_timestep(Tensor3<Scalar> const &x, Matrix<Scalar> const &weight, Vector<Scalar> const &bias)
  -> Tensor3<Scalar>
{
  require_channels(x, weight.cols(), "linear_per_timestep");
  require_bias(bias, weight.rows(), "linear_per_timestep");
  Tensor3<Scalar> out(x.batch(), weight.rows(), x.time());
  for (Index b = 0; b < x.batch(); ++b) {
    for (Index t = 0; t < x.time(); ++t) {
      out.item(b).col(t).noalias() = weight * x.item(b).col(t) + bias;
    }
  }
  return out;
}

template <typename Scalar>
auto depthwise_temporal_conv(Tensor3<Scalar> const &x, Matrix<Scalar> const &weight, Vector<Scalar> const &bias)
  -> Tensor3<Scalar>
{
  require_channels(x, weight.rows(), "depthwise_temporal_conv");
  require_bias(bias, weight.rows(), "depthwise_temporal_conv");
  Index const K = weight.cols();
  if (x.time() < K) {
    throw ShapeError(fmt::format("depthwise_temporal_conv: time {} shorter than kernel {}", x.time(), K));
  }
  Index const     T_out = x.time() - K + 1;
  Tensor3<Scalar> out(x.batch(), x.channels(), T_out);
  for (Index b = 0; b < x.batch(); ++b) {
    auto o = out.item(b);
    auto in = x.item(b);
    o.colwise() = bias;
    for (Index k = 0; k < K; ++k) {
      o.array() += in.middleCols(k, T_out).array().colwise() * weight.col(k).array();
    }
  }
  return out;
}

template <typename Scalar>
auto temporal_conv(Tensor3<Scalar> const &x, Matrix<Scalar> const &weight, Vector<Scalar> const &bias)
  -> Tensor3<Scalar>
{
  Index const C_in = x.channels();
  if (weight.cols() % C_in != 0) {
    throw ShapeError(fmt::format("temporal_conv: weight has {} columns, not a multiple of {} input channels",
                                 weight.cols(), C_in));
  }
  require_bias(bias, weight.rows(), "temporal_conv");
  Index const K = weight.cols() / C_in;
  if (x.time() < K) { throw ShapeError(fmt::format("temporal_conv: time {} shorter than kernel {}", x.time(), K)); }
  Index const     T_out = x.time() - K + 1;
  Tensor3<Scalar> out(x.batch(), weight.rows(), T_out);
  Matrix<Scalar>  columns(C_in * K, T_out);
  for (Index b = 0; b < x.batch(); ++b) {
    auto in = x.item(b);
    for (Index i = 0; i < C_in; ++i) {
      for (Index k = 0; k < K; ++k) { columns.row(i * K + k) = in.row(i).segment(k, T_out); }
    }
    out.item(b).noalias() = weight * columns;
    out.item(b).colwise() += bias;
  }
  return out;
}

template <typename Scalar>
auto layer_norm(Tensor3<Scalar> const &x, Vector<Scalar> const &gamma, Vector<Scalar> const &beta, double eps)
  -> Tensor3<Scalar>
{
  require_bias(gamma, x.channels(), "layer_norm");
  require_bias(beta, x.channels(), "layer_norm");
  Tensor3<Scalar> out(x.batch(), x.channels(), x.time());
  for (Index b = 0; b < x.batch(); ++b) {
    auto       in = x.item(b).array();
    auto const mean = in.colwise().mean().eval();
    auto const centered = (in.rowwise() - mean).eval();
    auto const inv_std = (centered.square().colwise().mean() + Scalar(eps)).rsqrt().eval();
    out.item(b).array() = ((centered.rowwise() * inv_std).colwise() * gamma.array()).colwise() + beta.array();
  }
  return out;
}

template <typename Scalar> auto leaky_relu(Tensor3<Scalar> const &x, Scalar slope) -> Tensor3<Scalar>
{
  Tensor3<Scalar> out = x;
  out.values() = x.values().unaryExpr([slope](Scalar v) { return v >= Scalar(0) ? v : slope * v; });
  return out;
}

template <typename Scalar> auto causal_pad(Tensor3<Scalar> const &x, Index amount) -> Tensor3<Scalar>
{
  if (amount < 0) { throw ShapeError("causal_pad: negative amount"); }
  if (amount == 0) { return x; }
  Tensor3<Scalar> out(x.batch(), x.channels(), x.time() + amount);
  out.values().rightCols(x.time()) = x.values();
  return out;
}

template <typename Scalar> auto concat_channels(std::span<Tensor3<Scalar> const *const> parts) -> Tensor3<Scalar>
{
  if (parts.empty()) { throw ShapeError("concat_channels: empty part list"); }
  Index const B = parts.front()->batch();
  Index const T = parts.front()->time();
  Index       C = 0;
  for (auto const *p : parts) {
    if (p->batch() != B || p->time() != T) {
      throw ShapeError(fmt::format("concat_channels: part {} does not match batch {} / time {}", p->shape_string(), B, T));
    }
    C += p->channels();
  }
  Tensor3<Scalar> out(B, C, T);
  for (Index b = 0; b < B; ++b) {
    Index offset = 0;
    for (auto const *p : parts) {
      out.item(b).middleRows(offset, p->channels()) = p->item(b);
      offset += p->channels();
    }
  }
  return out;
}

template <typename Scalar> auto concat_channels(std::vector<Tensor3<Scalar>> const &parts) -> Tensor3<Scalar>
{
  std::vector<Tensor3<Scalar> const *> ptrs;
  ptrs.reserve(parts.size());
  for (auto const &p : parts) { ptrs.push_back(&p); }
  return concat_channels<Scalar>(std::span<Tensor3<Scalar> const *const>(ptrs));
}

template <typename Scalar> auto slice_channels(Tensor3<Scalar> const &x, Index first, Index count) -> Tensor3<Scalar>
{
  if (first < 0 || count < 1 || first + count > x.channels()) {
    throw ShapeError(fmt::format("slice_channels: [{}, {}) outside {} channels", first, first + count, x.channels()));
  }
  Tensor3<Scalar> out(x.batch(), count, x.time());
  for (Index b = 0; b < x.batch(); ++b) { out.item(b) = x.item(b).middleRows(first, count); }
  return out;
}

template <typename Scalar>
auto attention_scores(Tensor3<Scalar> const &x, Matrix<Scalar> const &weight, Vector<Scalar> const &bias)
  -> Matrix<Scalar>
{
  require_channels(x, weight.cols(), "spatial_attention");
  if (weight.rows() != x.channels()) { throw ShapeError("spatial_attention: score map must be square"); }
  require_bias(bias, weight.rows(), "spatial_attention");
  Matrix<Scalar> scores(x.batch(), x.channels());
  for (Index b = 0; b < x.batch(); ++b) {
    Vector<Scalar> const z = weight * x.item(b).rowwise().mean() + bias;
    Vector<Scalar> const e = (z.array() - z.maxCoeff()).exp();
    scores.row(b) = (e / e.sum()).transpose();
  }
  return scores;
}

template <typename Scalar>
auto spatial_attention(Tensor3<Scalar> const &x, Matrix<Scalar> const &weight, Vector<Scalar> const &bias)
  -> Tensor3<Scalar>
{
  auto const      scores = attention_scores(x, weight, bias);
  Scalar const    H = Scalar(x.channels());
  Tensor3<Scalar> out(x.batch(), x.channels(), x.time());
  for (Index b = 0; b < x.batch(); ++b) {
    out.item(b).array() = x.item(b).array().colwise() * (H * scores.row(b).transpose().array());
  }
  return out;
}

#define CCN_INSTANTIATE(S)                                                                                             \
  template auto pointwise_conv(Tensor3<S> const &, Matrix<S> const &, Vector<S> const &) -> Tensor3<S>;              \
  template auto linear_per_timestep(Tensor3<S> const &, Matrix<S> const &, Vector<S> const &) -> Tensor3<S>;         \
  template auto depthwise_temporal_conv(Tensor3<S> const &, Matrix<S> const &, Vector<S> const &) -> Tensor3<S>;     \
  template auto temporal_conv(Tensor3<S> const &, Matrix<S> const &, Vector<S> const &) -> Tensor3<S>;               \
  template auto layer_norm(Tensor3<S> const &, Vector<S> const &, Vector<S> const &, double) -> Tensor3<S>;          \
  template auto leaky_relu(Tensor3<S> const &, S) -> Tensor3<S>;                                                     \
  template auto causal_pad(Tensor3<S> const &, Index) -> Tensor3<S>;                                                 \
  template auto concat_channels(std::span<Tensor3<S> const *const>) -> Tensor3<S>;                                   \
  template auto concat_channels(std::vector<Tensor3<S>> const &) -> Tensor3<S>;                                      \
  template auto slice_channels(Tensor3<S> const &, Index, Index) -> Tensor3<S>;                                      \
  template auto attention_scores(Tensor3<S> const &, Matrix<S> const &, Vector<S> const &) -> Matrix<S>;             \
  template auto spatial_attention(Tensor3<S> const &, Matrix<S> const &, Vector<S> const &) -> Tensor3<S>;

CCN_INSTANTIATE(float)
CCN_INSTANTIATE(double)

#undef CCN_INSTANTIATE

} // namespace ccn::kernels
