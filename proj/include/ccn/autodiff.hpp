#pragma once

#include "tensor.hpp"

#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace ccn {

template <typename Scalar> class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename Scalar> struct Var
{
  Graph<Scalar> *graph = nullptr;
  std::size_t    id = 0;

  [[nodiscard]] auto value() const -> Tensor3<Scalar> const &;
  [[nodiscard]] auto batch() const -> Index { return value().batch(); }
  [[nodiscard]] auto channels() const -> Index { return value().channels(); }
  [[nodiscard]] auto time() const -> Index { return value().time(); }
};

/*
 * Reverse-mode tape. Nodes are appended in evaluation order, so walking the
 * tape backwards visits every node after all of its consumers. Parameters are
 * not nodes: ops hold references to them and accumulate straight into
 * Parameter::grad.
 *
 * A graph built with record = false keeps values only (inference).
 */
template <typename Scalar> class Graph
{
public:
  using Backward = std::function<void(Graph &, Tensor3<Scalar> const &)>;

  explicit Graph(bool record = true)
    : record_(record)
  {
  }
  Graph(Graph const &) = delete;
  auto operator=(Graph const &) -> Graph & = delete;

  auto input(Tensor3<Scalar> value) -> Var<Scalar>;

  // Appends an op result. `backward` receives the gradient w.r.t. this node.
  auto record(Tensor3<Scalar> value, Backward backward) -> Var<Scalar>;

  [[nodiscard]] auto recording() const -> bool { return record_; }
  [[nodiscard]] auto size() const -> std::size_t { return nodes_.size(); }
  [[nodiscard]] auto value(std::size_t id) const -> Tensor3<Scalar> const & { return nodes_[id].value; }

  // Gradient of the last backward() root w.r.t. node `v`; zeros if unreached.
  [[nodiscard]] auto grad(Var<Scalar> v) -> Tensor3<Scalar> const &;

  // Zero-initialized accumulator for node `id`, used by backward rules.
  auto grad_buffer(std::size_t id) -> Tensor3<Scalar> &;

  /*
   * Seeds d(root)/d(root) = 1 and runs every recorded rule in reverse order.
   * All parameter gradients in `params` are reset first, so parameters that do
   * not feed the root end with zero gradient.
   */
  void backward(Var<Scalar> root, ParameterSet<Scalar> &params);

private:
  struct Node
  {
    Tensor3<Scalar> value;
    Tensor3<Scalar> grad;
    Backward        backward;
  };
  std::vector<Node> nodes_;
  bool              record_;
};

template <typename Scalar> auto Var<Scalar>::value() const -> Tensor3<Scalar> const & { return graph->value(id); }

// Differentiable ops. Weight layouts match the kernels in kernels.hpp.
template <typename Scalar> auto pointwise_conv(Var<Scalar> x, Parameter<Scalar> &weight, Parameter<Scalar> &bias) -> Var<Scalar>;
template <typename Scalar> auto linear_per_timestep(Var<Scalar> x, Parameter<Scalar> &weight, Parameter<Scalar> &bias) -> Var<Scalar>;
template <typename Scalar> auto depthwise_temporal_conv(Var<Scalar> x, Parameter<Scalar> &weight, Parameter<Scalar> &bias) -> Var<Scalar>;
template <typename Scalar> auto temporal_conv(Var<Scalar> x, Parameter<Scalar> &weight, Parameter<Scalar> &bias) -> Var<Scalar>;
template <typename Scalar> auto layer_norm(Var<Scalar> x, Parameter<Scalar> &gamma, Parameter<Scalar> &beta) -> Var<Scalar>;
template <typename Scalar> auto leaky_relu(Var<Scalar> x, Scalar slope) -> Var<Scalar>;
template <typename Scalar> auto causal_pad(Var<Scalar> x, Index amount) -> Var<Scalar>;
template <typename Scalar> auto concat_channels(std::span<Var<Scalar> const> parts) -> Var<Scalar>;
template <typename Scalar> auto concat_channels(std::initializer_list<Var<Scalar>> parts) -> Var<Scalar>
{
  return concat_channels(std::span<Var<Scalar> const>(parts.begin(), parts.size()));
}
template <typename Scalar> auto slice_channels(Var<Scalar> x, Index first, Index count) -> Var<Scalar>;
template <typename Scalar> auto spatial_attention(Var<Scalar> x, Parameter<Scalar> &weight, Parameter<Scalar> &bias) -> Var<Scalar>;

// Scalar reductions, shape (1, 1, 1).
template <typename Scalar> auto sum(Var<Scalar> x) -> Var<Scalar>;
template <typename Scalar> auto weighted_sum(Var<Scalar> x, Tensor3<Scalar> const &weights) -> Var<Scalar>;

extern template class Graph<float>;
extern template class Graph<double>;

} // namespace ccn
