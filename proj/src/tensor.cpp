#include "ccn/tensor.hpp"

#include <fmt/format.h>

#include <functional>
#include <numeric>

namespace ccn {

auto to_string(FormatErrc code) -> std::string
{
  switch (code) {
  case FormatErrc::BadMagic: return "bad-magic";
  case FormatErrc::UnsupportedVersion: return "unsupported-version";
  case FormatErrc::Truncated: return "truncated";
  case FormatErrc::BadHeader: return "bad-header";
  case FormatErrc::SizeMismatch: return "size-mismatch";
  case FormatErrc::ParameterMismatch: return "parameter-mismatch";
  case FormatErrc::ChecksumMismatch: return "checksum-mismatch";
  case FormatErrc::DtypeMismatch: return "dtype-mismatch";
  }
  return "unknown";
}

auto to_string(LoadErrc code) -> std::string
{
  switch (code) {
  case LoadErrc::MissingFile: return "missing-file";
  case LoadErrc::BadManifest: return "bad-manifest";
  case LoadErrc::LengthMismatch: return "length-mismatch";
  case LoadErrc::NonFinite: return "non-finite";
  case LoadErrc::Io: return "io";
  }
  return "unknown";
}

template <typename Scalar>
Tensor3<Scalar>::Tensor3(Index batch, Index channels, Index time)
  : batch_(batch)
  , channels_(channels)
  , values_(Matrix<Scalar>::Zero(batch * channels, time))
{
  if (batch < 1 || channels < 1 || time < 1) {
    throw ShapeError(fmt::format("Tensor3 dims must be >= 1, got ({}, {}, {})", batch, channels, time));
  }
}

template <typename Scalar>
Tensor3<Scalar>::Tensor3(Index batch, Index channels, Matrix<Scalar> values)
  : batch_(batch)
  , channels_(channels)
  , values_(std::move(values))
{
  if (batch < 1 || channels < 1 || values_.cols() < 1) {
    throw ShapeError(fmt::format("Tensor3 dims must be >= 1, got ({}, {}, {})", batch, channels, values_.cols()));
  }
  if (values_.rows() != batch * channels) {
    throw ShapeError(fmt::format("Tensor3 storage has {} rows, expected {} x {}", values_.rows(), batch, channels));
  }
}

template <typename Scalar> auto Tensor3<Scalar>::from_item(Matrix<Scalar> item) -> Tensor3
{
  auto const channels = item.rows();
  return Tensor3(1, channels, std::move(item));
}

template <typename Scalar>
auto Tensor3<Scalar>::constant(Index batch, Index channels, Index time, Scalar value) -> Tensor3
{
  Tensor3 t(batch, channels, time);
  t.values_.setConstant(value);
  return t;
}

template <typename Scalar> auto Tensor3<Scalar>::shape_string() const -> std::string
{
  return fmt::format("({}, {}, {})", batch_, channels_, time());
}

template <typename Scalar> auto ParameterSet<Scalar>::add(std::string name, std::vector<Index> shape) -> ParamId
{
  if (shape.empty()) { throw ConfigError("parameter '" + name + "' has no dimensions"); }
  for (auto d : shape) {
    if (d < 1) { throw ConfigError("parameter '" + name + "' has a zero-sized dimension"); }
  }
  if (index_.contains(name)) { throw ConfigError("duplicate parameter name '" + name + "'"); }
  Index const rows = shape.front();
  Index const cols = std::accumulate(shape.begin() + 1, shape.end(), Index{1}, std::multiplies<>());

  Parameter<Scalar> p;
  p.name = name;
  p.shape = std::move(shape);
  p.value = Matrix<Scalar>::Zero(rows, cols);
  p.grad = Matrix<Scalar>::Zero(rows, cols);
  p.adam_m = Matrix<Scalar>::Zero(rows, cols);
  p.adam_v = Matrix<Scalar>::Zero(rows, cols);
  ParamId const id = params_.size();
  params_.push_back(std::move(p));
  index_.emplace(std::move(name), id);
  return id;
}

template <typename Scalar> auto ParameterSet<Scalar>::find(std::string const &name) const -> ParamId
{
  auto it = index_.find(name);
  if (it == index_.end()) { throw ConfigError("no parameter named '" + name + "'"); }
  return it->second;
}

template <typename Scalar> auto ParameterSet<Scalar>::scalar_count() const -> Index
{
  Index n = 0;
  for (auto const &p : params_) { n += p.size(); }
  return n;
}

template <typename Scalar> void ParameterSet<Scalar>::zero_grad()
{
  for (auto &p : params_) { p.grad.setZero(); }
}

template <typename Scalar> auto ParameterSet<Scalar>::snapshot() const -> std::vector<Matrix<Scalar>>
{
  std::vector<Matrix<Scalar>> out;
  out.reserve(params_.size());
  for (auto const &p : params_) { out.push_back(p.value); }
  return out;
}

template <typename Scalar> void ParameterSet<Scalar>::restore(std::vector<Matrix<Scalar>> const &values)
{
  if (values.size() != params_.size()) { throw ShapeError("snapshot does not match parameter count"); }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].rows() != params_[i].value.rows() || values[i].cols() != params_[i].value.cols()) {
      throw ShapeError("snapshot shape mismatch for '" + params_[i].name + "'");
    }
    params_[i].value = values[i];
  }
}

template class Tensor3<float>;
template class Tensor3<double>;
template class ParameterSet<float>;
template class ParameterSet<double>;

} // namespace ccn
