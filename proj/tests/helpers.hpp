#pragma once

#include "ccn/random.hpp"
#include "ccn/tensor.hpp"

namespace ccn::testing {

template <typename Scalar = double>
auto random_tensor(Rng &rng, Index B, Index C, Index T, double lo = -1.0, double hi = 1.0) -> Tensor3<Scalar>
{
  Tensor3<Scalar> t(B, C, T);
  for (Index i = 0; i < t.size(); ++i) { t.data()[i] = static_cast<Scalar>(rng.uniform(lo, hi)); }
  return t;
}

template <typename Scalar = double>
auto random_matrix(Rng &rng, Index rows, Index cols, double lo = -1.0, double hi = 1.0) -> Matrix<Scalar>
{
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) { m.data()[i] = static_cast<Scalar>(rng.uniform(lo, hi)); }
  return m;
}

template <typename Scalar = double> auto random_vector(Rng &rng, Index n) -> Vector<Scalar>
{
  Vector<Scalar> v(n);
  for (Index i = 0; i < n; ++i) { v[i] = static_cast<Scalar>(rng.uniform(-1.0, 1.0)); }
  return v;
}

inline auto max_abs_diff(Matrix<double> const &a, Matrix<double> const &b) -> double
{
  return (a - b).cwiseAbs().maxCoeff();
}

} // namespace ccn::testing
