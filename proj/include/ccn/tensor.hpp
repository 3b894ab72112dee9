#pragma once

#include "errors.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

namespace ccn {

using Index = Eigen::Index;

template <typename Scalar> using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar> using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/*
 * Batch x channel x time signal. Values live in one row-major matrix of
 * (batch * channels) rows by time columns, so the flat layout is
 * [batch][channel][time] and item(b) is a contiguous channels x time block.
 */
template <typename Scalar> class Tensor3
{
public:
  using scalar_type = Scalar;

  Tensor3() = default;
  Tensor3(Index batch, Index channels, Index time);
  Tensor3(Index batch, Index channels, Matrix<Scalar> values);

  // Single batch item from a channels x time matrix.
  static auto from_item(Matrix<Scalar> item) -> Tensor3;
  static auto constant(Index batch, Index channels, Index time, Scalar value) -> Tensor3;

  [[nodiscard]] auto batch() const -> Index { return batch_; }
  [[nodiscard]] auto channels() const -> Index { return channels_; }
  [[nodiscard]] auto time() const -> Index { return values_.cols(); }
  [[nodiscard]] auto size() const -> Index { return values_.size(); }
  [[nodiscard]] auto empty() const -> bool { return values_.size() == 0; }

  auto values() -> Matrix<Scalar> & { return values_; }
  [[nodiscard]] auto values() const -> Matrix<Scalar> const & { return values_; }

  auto item(Index b) { return values_.middleRows(b * channels_, channels_); }
  [[nodiscard]] auto item(Index b) const { return values_.middleRows(b * channels_, channels_); }

  auto operator()(Index b, Index c, Index t) -> Scalar & { return values_(b * channels_ + c, t); }
  auto operator()(Index b, Index c, Index t) const -> Scalar { return values_(b * channels_ + c, t); }

  [[nodiscard]] auto data() const -> Scalar const * { return values_.data(); }
  auto data() -> Scalar * { return values_.data(); }

  [[nodiscard]] auto same_shape(Tensor3 const &other) const -> bool
  {
    return batch_ == other.batch_ && channels_ == other.channels_ && time() == other.time();
  }
  [[nodiscard]] auto all_finite() const -> bool { return values_.allFinite(); }
  [[nodiscard]] auto shape_string() const -> std::string;

  template <typename Other> [[nodiscard]] auto cast() const -> Tensor3<Other>
  {
    return Tensor3<Other>(batch_, channels_, values_.template cast<Other>());
  }

  auto operator==(Tensor3 const &other) const -> bool
  {
    return same_shape(other) && values_ == other.values_;
  }

private:
  Index          batch_ = 0;
  Index          channels_ = 0;
  Matrix<Scalar> values_;
};

using ParamId = std::size_t;

/*
 * Learnable tensor. `shape` holds the logical dims (e.g. {out, in, kernel});
 * storage is shape[0] rows by the product of the remaining dims.
 */
template <typename Scalar> struct Parameter
{
  std::string        name;
  std::vector<Index> shape;
  Matrix<Scalar>     value;
  Matrix<Scalar>     grad;
  Matrix<Scalar>     adam_m;
  Matrix<Scalar>     adam_v;

  [[nodiscard]] auto size() const -> Index { return value.size(); }
};

template <typename Scalar> class ParameterSet
{
public:
  // Throws ConfigError when the name is already taken.
  auto add(std::string name, std::vector<Index> shape) -> ParamId;

  auto operator[](ParamId id) -> Parameter<Scalar> & { return params_[id]; }
  auto operator[](ParamId id) const -> Parameter<Scalar> const & { return params_[id]; }

  [[nodiscard]] auto find(std::string const &name) const -> ParamId;
  [[nodiscard]] auto contains(std::string const &name) const -> bool { return index_.contains(name); }
  [[nodiscard]] auto size() const -> std::size_t { return params_.size(); }
  [[nodiscard]] auto scalar_count() const -> Index;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  [[nodiscard]] auto begin() const { return params_.begin(); }
  [[nodiscard]] auto end() const { return params_.end(); }

  void zero_grad();

  // Set by backward(); adam_step refuses to run until gradients exist.
  [[nodiscard]] auto grads_ready() const -> bool { return grads_ready_; }
  void mark_grads_ready(bool ready = true) { grads_ready_ = ready; }

  // Snapshot of all values, in parameter order.
  [[nodiscard]] auto snapshot() const -> std::vector<Matrix<Scalar>>;
  void restore(std::vector<Matrix<Scalar>> const &values);

private:
  std::deque<Parameter<Scalar>>           params_;
  std::unordered_map<std::string, ParamId> index_;
  bool                                     grads_ready_ = false;
};

extern template class Tensor3<float>;
extern template class Tensor3<double>;
extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

} // namespace ccn
