#include "ridge.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>

namespace ccn::testing {

namespace {

// Textbook two-pass correlation, kept apart from the library's pearson().
auto corr(Eigen::VectorXd const &x, Eigen::VectorXd const &y) -> double
{
  Eigen::VectorXd const xc = x.array() - x.mean();
  Eigen::VectorXd const yc = y.array() - y.mean();
  double const          den = std::sqrt(xc.squaredNorm() * yc.squaredNorm());
  return den > 0 ? xc.dot(yc) / den : 0.0;
}

struct Gram
{
  Matrix<double> xtx;
  Matrix<double> xty;
};

auto accumulate(std::span<WindowPair const> windows, Index lags) -> Gram
{
  Gram g;
  for (auto const &w : windows) {
    auto const           X = lagged_features(w.eeg, lags);
    Matrix<double> const Y = w.target.bottomRows(mel_subbands).transpose().cast<double>();
    if (g.xtx.size() == 0) {
      g.xtx = Matrix<double>::Zero(X.cols(), X.cols());
      g.xty = Matrix<double>::Zero(X.cols(), Y.cols());
    }
    g.xtx.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
    g.xty.noalias() += X.transpose() * Y;
  }
  g.xtx = g.xtx.selfadjointView<Eigen::Lower>();
  return g;
}

auto solve(Gram const &g, Index lags, double lambda) -> RidgeFit
{
  Matrix<double> A = g.xtx;
  // The intercept is not shrunk.
  for (Index i = 0; i + 1 < A.rows(); ++i) { A(i, i) += lambda; }
  RidgeFit fit;
  fit.lags = lags;
  fit.lambda = lambda;
  fit.weights = A.ldlt().solve(g.xty);
  return fit;
}

} // namespace

auto lagged_features(Matrix<float> const &eeg, Index lags) -> Matrix<double>
{
  Index const    C = eeg.rows(), T = eeg.cols();
  Matrix<double> X = Matrix<double>::Zero(T, C * lags + 1);
  for (Index l = 0; l < lags; ++l) {
    for (Index t = l; t < T; ++t) {
      for (Index c = 0; c < C; ++c) { X(t, l * C + c) = eeg(c, t - l); }
    }
  }
  X.col(C * lags).setOnes();
  return X;
}

auto ridge_fit(std::span<WindowPair const> windows, Index lags, double lambda) -> RidgeFit
{
  return solve(accumulate(windows, lags), lags, lambda);
}

auto ridge_score(RidgeFit const &fit, std::span<WindowPair const> windows) -> double
{
  double total = 0.0;
  for (auto const &w : windows) {
    Matrix<double> const P = lagged_features(w.eeg, fit.lags) * fit.weights;
    double               s = 0.0;
    for (Index k = 0; k < mel_subbands; ++k) {
      Eigen::VectorXd const y = w.target.row(fused_subbands - mel_subbands + k).transpose().cast<double>();
      s += corr(P.col(k), y);
    }
    total += s / static_cast<double>(mel_subbands);
  }
  return total / static_cast<double>(windows.size());
}

auto ridge_baseline(std::span<WindowPair const> train,
                    std::span<WindowPair const> val,
                    std::span<WindowPair const> test,
                    Index                       lags) -> RidgeBaseline
{
  auto const   g = accumulate(train, lags);
  double const scale = g.xtx.diagonal().head(g.xtx.rows() - 1).mean();
  RidgeBaseline best;
  best.val_score = -std::numeric_limits<double>::infinity();
  for (double rel : {1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0}) {
    auto         fit = solve(g, lags, rel * scale);
    double const v = ridge_score(fit, val);
    if (v > best.val_score) {
      best.val_score = v;
      best.fit = std::move(fit);
    }
  }
  best.test_score = ridge_score(best.fit, test);
  return best;
}

} // namespace ccn::testing
