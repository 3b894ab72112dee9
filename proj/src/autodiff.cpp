#include "ccn/autodiff.hpp"
#include "ccn/kernels.hpp"

#include <fmt/format.h>

namespace ccn {

namespace {

template <typename Scalar> auto as_vector(Parameter<Scalar> const &p) -> Vector<Scalar>
{
  return Eigen::Map<Vector<Scalar> const>(p.value.data(), p.value.size());
}

template <typename Scalar> auto grad_vector(Parameter<Scalar> &p)
{
  return Eigen::Map<Vector<Scalar>>(p.grad.data(), p.grad.size());
}

template <typename Scalar> auto scalar_tensor(Scalar v) -> Tensor3<Scalar>
{
  return Tensor3<Scalar>::constant(1, 1, 1, v);
}

} // namespace

template <typename Scalar> auto Graph<Scalar>::input(Tensor3<Scalar> value) -> Var<Scalar>
{
  return record(std::move(value), nullptr);
}

template <typename Scalar> auto Graph<Scalar>::record(Tensor3<Scalar> value, Backward backward) -> Var<Scalar>
{
  if (value.empty()) { throw ShapeError("graph node with empty value"); }
  Node n;
  n.value = std::move(value);
  if (record_) { n.backward = std::move(backward); }
  nodes_.push_back(std::move(n));
  return Var<Scalar>{this, nodes_.size() - 1};
}

template <typename Scalar> auto Graph<Scalar>::grad_buffer(std::size_t id) -> Tensor3<Scalar> &
{
  auto &n = nodes_[id];
  if (n.grad.empty()) { n.grad = Tensor3<Scalar>(n.value.batch(), n.value.channels(), n.value.time()); }
  return n.grad;
}

template <typename Scalar> auto Graph<Scalar>::grad(Var<Scalar> v) -> Tensor3<Scalar> const &
{
  return grad_buffer(v.id);
}

template <typename Scalar> void Graph<Scalar>::backward(Var<Scalar> root, ParameterSet<Scalar> &params)
{
  if (!record_) { throw UsageError("backward on a graph built without recording"); }
  if (root.graph != this || root.id >= nodes_.size()) { throw UsageError("backward root does not belong to this graph"); }
  auto const &rv = nodes_[root.id].value;
  if (rv.batch() != 1 || rv.channels() != 1 || rv.time() != 1) {
    throw UsageError("backward root must be a scalar, got " + rv.shape_string());
  }
  params.zero_grad();
  for (auto &n : nodes_) { n.grad = Tensor3<Scalar>(); }
  grad_buffer(root.id).values().setConstant(Scalar(1));
  for (std::size_t i = root.id + 1; i-- > 0;) {
    auto &n = nodes_[i];
    if (n.grad.empty() || !n.backward) { continue; }
    n.backward(*this, n.grad);
  }
  params.mark_grads_ready();
}

template <typename Scalar>
auto pointwise_conv(Var<Scalar> x, Parameter<Scalar> &weight, Parameter<Scalar> &bias) -> Var<Scalar>
{
  auto out = kernels::pointwise_conv(x.value(), weight.value, as_vector(bias));
  return x.graph->record(std::move(out), [x, &weight, &bias](Graph<Scalar> &g, Tensor3<Scalar> const &dy) {
    auto const &xv = x.value();
    auto       &dx = g.grad_buffer(x.id);
    auto        db = grad_vector(bias);
    for (Index b = 0; b < xv.batch(); ++b) {
      weight.grad.noalias() += dy.item(b) * xv.item(b).transpose();
      db += dy.item(b).rowwise().sum();
      dx.item(b).noalias() += weight.value.transpose() * dy.item(b);
    }
  });
}

template <typename Scalar>
auto linear_per_timestep(Var<Scalar> x, Parameter<Scalar> &weight, Parameter<Scalar> &bias) -> Var<Scalar>
{
  auto out = kernels::linear_per_timestep(x.value(), weight.value, as_vector(bias));
  return x.graph->record(std::move(out), [x, &weight, &bias](Graph<Scalar> &g, Tensor3<Scalar> const &dy) {
    auto const &xv = x.value();
    auto       &dx = g.grad_buffer(x.id);
    auto        db = grad_vector(bias);
    for (Index b = 0; b < xv.batch(); ++b) {
      for (Index t = 0; t < xv.time(); ++t) {
        weight.grad.noalias() += dy.item(b).col(t) * xv.item(b).col(t).transpose();
        db += dy.item(b).col(t);
        dx.item(b).col(t).noalias() += weight.value.transpose() * dy.item(b).col(t);
      }
    }
  });
}

template <typename Scalar>
auto depthwise_temporal_conv(Var<Scalar> x, Parameter<Scalar> &weight, Parameter<Scalar> &bias) -> Var<Scalar>
{
  auto out = kernels::depthwise_temporal_conv(x.value(), weight.value, as_vector(bias));
  return x.graph->record(std::move(out), [x, &weight, &bias](Graph<Scalar> &g, Tensor3<Scalar> const &dy) {
    auto const &xv = x.value();
    auto       &dx = g.grad_buffer(x.id);
    auto        db = grad_vector(bias);
    Index const K = weight.value.cols();
    Index const T_out = dy.time();
    for (Index b = 0; b < xv.batch(); ++b) {
      auto const gy = dy.item(b).array();
      db += gy.rowwise().sum().matrix();
      for (Index k = 0; k < K; ++k) {
        weight.grad.col(k) += (gy * xv.item(b).middleCols(k, T_out).array()).rowwise().sum().matrix();
        dx.item(b).middleCols(k, T_out).array() += gy.colwise() * weight.value.col(k).array();
      }
    }
  });
}

template <typename Scalar>
auto temporal_conv(Var<Scalar> x, Parameter<Scalar> &weight, Parameter<Scalar> &bias) -> Var<Scalar>
{
  auto out = kernels::temporal_conv(x.value(), weight.value, as_vector(bias));
  return x.graph->record(std::move(out), [x, &weight, &bias](Graph<Scalar> &g, Tensor3<Scalar> const &dy) {
    auto const    &xv = x.value();
    auto          &dx = g.grad_buffer(x.id);
    auto           db = grad_vector(bias);
    Index const    C_in = xv.channels();
    Index const    K = weight.value.cols() / C_in;
    Index const    T_out = dy.time();
    Matrix<Scalar> columns(C_in * K, T_out);
    Matrix<Scalar> dcolumns(C_in * K, T_out);
    for (Index b = 0; b < xv.batch(); ++b) {
      auto in = xv.item(b);
      for (Index i = 0; i < C_in; ++i) {
        for (Index k = 0; k < K; ++k) { columns.row(i * K + k) = in.row(i).segment(k, T_out); }
      }
      weight.grad.noalias() += dy.item(b) * columns.transpose();
      db += dy.item(b).rowwise().sum();
      dcolumns.noalias() = weight.value.transpose() * dy.item(b);
      auto dxb = dx.item(b);
      for (Index i = 0; i < C_in; ++i) {
        for (Index k = 0; k < K; ++k) { dxb.row(i).segment(k, T_out) += dcolumns.row(i * K + k); }
      }
    }
  });
}

template <typename Scalar>
auto layer_norm(Var<Scalar> x, Parameter<Scalar> &gamma, Parameter<Scalar> &beta) -> Var<Scalar>
{
  auto out = kernels::layer_norm(x.value(), as_vector(gamma), as_vector(beta));
  return x.graph->record(std::move(out), [x, &gamma, &beta](Graph<Scalar> &g, Tensor3<Scalar> const &dy) {
    auto const &xv = x.value();
    auto       &dx = g.grad_buffer(x.id);
    auto        dgamma = grad_vector(gamma);
    auto        dbeta = grad_vector(beta);
    auto const  gam = as_vector(gamma);
    for (Index b = 0; b < xv.batch(); ++b) {
      auto const in = xv.item(b).array();
      auto const mean = in.colwise().mean().eval();
      auto const centered = (in.rowwise() - mean).eval();
      auto const inv_std = (centered.square().colwise().mean() + Scalar(kernels::layer_norm_eps)).rsqrt().eval();
      auto const xhat = (centered.rowwise() * inv_std).eval();
      auto const gy = dy.item(b).array();
      dgamma += (gy * xhat).rowwise().sum().matrix();
      dbeta += gy.rowwise().sum().matrix();
      auto const gh = (gy.colwise() * gam.array()).eval();
      auto const mean_gh = gh.colwise().mean().eval();
      auto const mean_ghx = (gh * xhat).colwise().mean().eval();
      dx.item(b).array() += ((gh.rowwise() - mean_gh) - xhat.rowwise() * mean_ghx).rowwise() * inv_std;
    }
  });
}

template <typename Scalar> auto leaky_relu(Var<Scalar> x, Scalar slope) -> Var<Scalar>
{
  auto out = kernels::leaky_relu(x.value(), slope);
  return x.graph->record(std::move(out), [x, slope](Graph<Scalar> &g, Tensor3<Scalar> const &dy) {
    auto const &xv = x.value().values().array();
    g.grad_buffer(x.id).values().array() += (xv >= Scalar(0)).select(dy.values().array(), slope * dy.values().array());
  });
}

template <typename Scalar> auto causal_pad(Var<Scalar> x, Index amount) -> Var<Scalar>
{
  auto out = kernels::causal_pad(x.value(), amount);
  return x.graph->record(std::move(out), [x](Graph<Scalar> &g, Tensor3<Scalar> const &dy) {
    auto &dx = g.grad_buffer(x.id);
    dx.values() += dy.values().rightCols(dx.time());
  });
}

template <typename Scalar> auto concat_channels(std::span<Var<Scalar> const> parts) -> Var<Scalar>
{
  if (parts.empty()) { throw ShapeError("concat_channels: empty part list"); }
  std::vector<Tensor3<Scalar> const *> values;
  std::vector<Var<Scalar>>             vars(parts.begin(), parts.end());
  for (auto const &p : parts) {
    if (p.graph != parts.front().graph) { throw UsageError("concat_channels: parts from different graphs"); }
    values.push_back(&p.value());
  }
  auto out = kernels::concat_channels<Scalar>(std::span<Tensor3<Scalar> const *const>(values));
  return parts.front().graph->record(std::move(out), [vars](Graph<Scalar> &g, Tensor3<Scalar> const &dy) {
    Index offset = 0;
    for (auto const &v : vars) {
      auto       &dx = g.grad_buffer(v.id);
      Index const C = dx.channels();
      for (Index b = 0; b < dy.batch(); ++b) { dx.item(b) += dy.item(b).middleRows(offset, C); }
      offset += C;
    }
  });
}

template <typename Scalar> auto slice_channels(Var<Scalar> x, Index first, Index count) -> Var<Scalar>
{
  auto out = kernels::slice_channels(x.value(), first, count);
  return x.graph->record(std::move(out), [x, first, count](Graph<Scalar> &g, Tensor3<Scalar> const &dy) {
    auto &dx = g.grad_buffer(x.id);
    for (Index b = 0; b < dy.batch(); ++b) { dx.item(b).middleRows(first, count) += dy.item(b); }
  });
}

template <typename Scalar>
auto spatial_attention(Var<Scalar> x, Parameter<Scalar> &weight, Parameter<Scalar> &bias) -> Var<Scalar>
{
  auto const  &xv = x.value();
  auto         scores = kernels::attention_scores(xv, weight.value, as_vector(bias));
  Scalar const H = Scalar(xv.channels());
  Tensor3<Scalar> out(xv.batch(), xv.channels(), xv.time());
  for (Index b = 0; b < xv.batch(); ++b) {
    out.item(b).array() = xv.item(b).array().colwise() * (H * scores.row(b).transpose().array());
  }
  return x.graph->record(
    std::move(out), [x, &weight, &bias, scores = std::move(scores), H](Graph<Scalar> &g, Tensor3<Scalar> const &dy) {
      auto const &xv = x.value();
      auto       &dx = g.grad_buffer(x.id);
      auto        db = grad_vector(bias);
      Scalar const T = Scalar(xv.time());
      for (Index b = 0; b < xv.batch(); ++b) {
        Vector<Scalar> const s = scores.row(b).transpose();
        auto const           gy = dy.item(b).array();
        // direct path through the multiplicative gate
        dx.item(b).array() += gy.colwise() * (H * s.array());
        // path through the scores
        Vector<Scalar> const ds = H * (gy * xv.item(b).array()).rowwise().sum().matrix();
        Vector<Scalar> const dz = s.array() * (ds.array() - s.dot(ds));
        Vector<Scalar> const m = xv.item(b).rowwise().mean();
        weight.grad.noalias() += dz * m.transpose();
        db += dz;
        Vector<Scalar> const dm = weight.value.transpose() * dz;
        dx.item(b).colwise() += dm / T;
      }
    });
}

template <typename Scalar> auto sum(Var<Scalar> x) -> Var<Scalar>
{
  auto out = scalar_tensor<Scalar>(x.value().values().sum());
  return x.graph->record(std::move(out), [x](Graph<Scalar> &g, Tensor3<Scalar> const &dy) {
    g.grad_buffer(x.id).values().array() += dy(0, 0, 0);
  });
}

template <typename Scalar> auto weighted_sum(Var<Scalar> x, Tensor3<Scalar> const &weights) -> Var<Scalar>
{
  if (!weights.same_shape(x.value())) {
    throw ShapeError("weighted_sum: weights " + weights.shape_string() + " vs input " + x.value().shape_string());
  }
  auto out = scalar_tensor<Scalar>((x.value().values().array() * weights.values().array()).sum());
  return x.graph->record(std::move(out), [x, weights](Graph<Scalar> &g, Tensor3<Scalar> const &dy) {
    g.grad_buffer(x.id).values() += dy(0, 0, 0) * weights.values();
  });
}

#define CCN_INSTANTIATE(S)                                                                                             \
  template class Graph<S>;                                                                                             \
  template auto pointwise_conv(Var<S>, Parameter<S> &, Parameter<S> &) -> Var<S>;                                      \
  template auto linear_per_timestep(Var<S>, Parameter<S> &, Parameter<S> &) -> Var<S>;                                 \
  template auto depthwise_temporal_conv(Var<S>, Parameter<S> &, Parameter<S> &) -> Var<S>;                             \
  template auto temporal_conv(Var<S>, Parameter<S> &, Parameter<S> &) -> Var<S>;                                       \
  template auto layer_norm(Var<S>, Parameter<S> &, Parameter<S> &) -> Var<S>;                                          \
  template auto leaky_relu(Var<S>, S) -> Var<S>;                                                                       \
  template auto causal_pad(Var<S>, Index) -> Var<S>;                                                                   \
  template auto concat_channels(std::span<Var<S> const>) -> Var<S>;                                                    \
  template auto slice_channels(Var<S>, Index, Index) -> Var<S>;                                                        \
  template auto spatial_attention(Var<S>, Parameter<S> &, Parameter<S> &) -> Var<S>;                                   \
  template auto sum(Var<S>) -> Var<S>;                                                                                 \
  template auto weighted_sum(Var<S>, Tensor3<S> const &) -> Var<S>;

CCN_INSTANTIATE(float)
CCN_INSTANTIATE(double)

#undef CCN_INSTANTIATE

} // namespace ccn
