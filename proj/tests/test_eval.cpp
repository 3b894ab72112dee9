#include "ccn/eval.hpp"
#include "helpers.hpp"

#include <doctest.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <unistd.h>

#include <cmath>
#include <filesystem>

using namespace ccn;
namespace fs = std::filesystem;

namespace {

auto pred(Matrix<double> v, std::string name = "r") -> Prediction
{
  return Prediction{std::move(name), "1", "s", std::move(v)};
}

auto random_pred(Rng &rng, Index rows, Index T, std::string name = "r") -> Prediction
{
  return pred(testing::random_matrix<double>(rng, rows, T, -2.0, 2.0), std::move(name));
}

auto row_mean_sd(Matrix<double> const &m, Index r) -> std::pair<double, double>
{
  double mean = 0;
  for (Index t = 0; t < m.cols(); ++t) { mean += m(r, t); }
  mean /= static_cast<double>(m.cols());
  double ss = 0;
  for (Index t = 0; t < m.cols(); ++t) { ss += (m(r, t) - mean) * (m(r, t) - mean); }
  return {mean, std::sqrt(ss / static_cast<double>(m.cols()))};
}

} // namespace

TEST_CASE("evaluate examples")
{
  Rng        rng(1);
  auto const p = random_pred(rng, 11, 50);
  auto const target = p.mel_view();
  auto const same = evaluate(p, target);
  CHECK(same.mean_r == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(same.n_recordings == 1);

  auto neg = p;
  neg.values = -p.values;
  CHECK(evaluate(neg, target).mean_r == doctest::Approx(-1.0).epsilon(1e-6));

  // Five rows correct, five constant.
  auto half = p;
  half.values.bottomRows(5).setConstant(3.0);
  auto const r = evaluate(half, target);
  CHECK(r.mean_r == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(r.subband_r[9] == 0.0);

  CHECK_THROWS_AS(evaluate(p, Matrix<double>(target.leftCols(49))), AlignmentError);
  CHECK_THROWS_AS(evaluate(pred(Matrix<double>::Zero(7, 50)), target), ShapeError);
}

TEST_CASE("evaluate never reads the envelope row")
{
  Rng  rng(2);
  auto p = random_pred(rng, 11, 40);
  auto const target = testing::random_matrix<double>(rng, 10, 40, -1.0, 1.0);
  auto const before = evaluate(p, target);
  p.values.row(0).setConstant(std::numeric_limits<double>::quiet_NaN());
  auto const after = evaluate(p, target);
  CHECK(after.mean_r == before.mean_r);
  CHECK(std::isfinite(after.mean_r));

  double sum = 0;
  for (double v : after.subband_r) { sum += v; }
  CHECK(std::abs(after.mean_r - sum / 10) <= 1e-9);

  auto mel_only = pred(p.values.bottomRows(10));
  CHECK(evaluate(mel_only, target).mean_r == before.mean_r);
}

TEST_CASE("multi-recording evaluation weighs recordings equally")
{
  Rng                         rng(3);
  std::vector<Prediction>     ps{random_pred(rng, 11, 30, "a"), random_pred(rng, 11, 90, "b")};
  std::vector<Matrix<double>> ts{testing::random_matrix<double>(rng, 10, 30, -1.0, 1.0),
                                 testing::random_matrix<double>(rng, 10, 90, -1.0, 1.0)};
  auto const all = evaluate(std::span<Prediction const>(ps), std::span<Matrix<double> const>(ts));
  auto const a = evaluate(ps[0], ts[0]);
  auto const b = evaluate(ps[1], ts[1]);
  CHECK(all.n_recordings == 2);
  CHECK(std::abs(all.mean_r - (a.mean_r + b.mean_r) / 2) <= 1e-12);
  CHECK(all.per_recording.size() == 2);

  auto const j = report_json(all);
  CHECK(j.contains("subband_r"));
  CHECK(j.at("subband_r").size() == 10);
  CHECK(j.contains("mean_r"));
  CHECK(j.at("n_recordings") == 2);

  std::vector<Prediction>     none;
  std::vector<Matrix<double>> no_targets;
  CHECK_THROWS_AS(evaluate(std::span<Prediction const>(none), std::span<Matrix<double> const>(no_targets)),
                  UsageError);
  CHECK_THROWS_AS(evaluate(std::span<Prediction const>(ps), std::span<Matrix<double> const>(ts).first(1)),
                  AlignmentError);
}

TEST_CASE("znormalize")
{
  Matrix<double> m(2, 3);
  m << 1, 2, 3, 5, 5, 5;
  auto const z = znormalize(pred(m)).values;
  double const k = std::sqrt(1.5);
  CHECK(std::abs(z(0, 0) + k) <= 1e-12);
  CHECK(std::abs(z(0, 1)) <= 1e-12);
  CHECK(std::abs(z(0, 2) - k) <= 1e-12);
  CHECK(z.row(1).isZero(0));

  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto const p = random_pred(rng, 11, 5 + static_cast<Index>(rng.below(100)));
    auto const zp = znormalize(p);
    for (Index r = 0; r < 11; ++r) {
      auto const [mean, sd] = row_mean_sd(zp.values, r);
      CHECK(std::abs(mean) <= 1e-9);
      CHECK(std::abs(sd - 1) <= 1e-9);
    }
    CHECK(testing::max_abs_diff(znormalize(zp).values, zp.values) <= 1e-9);
    auto const t = testing::random_matrix<double>(rng, 10, p.values.cols(), -1.0, 1.0);
    CHECK(std::abs(evaluate(zp, t).mean_r - evaluate(p, t).mean_r) <= 1e-9);
  }
}

TEST_CASE("ensemble identities")
{
  Rng        rng(5);
  auto const p = random_pred(rng, 11, 64);
  std::vector<Prediction> one{p};
  CHECK(ensemble(std::span<Prediction const>(one)).values == znormalize(p).values);

  for (std::size_t M : {2u, 3u, 4u, 7u}) {
    std::vector<Prediction> copies(M, p);
    auto const              e = ensemble(std::span<Prediction const>(copies));
    if (M == 2 || M == 4) {
      CHECK(e.values == znormalize(p).values);
    } else {
      CHECK(testing::max_abs_diff(e.values, znormalize(p).values) <= 1e-12);
    }
  }

  auto neg = p;
  neg.values = -p.values;
  std::vector<Prediction> pair{p, neg};
  CHECK(ensemble(std::span<Prediction const>(pair)).values.cwiseAbs().maxCoeff() <= 1e-12);

  std::vector<Prediction> none;
  CHECK_THROWS_AS(ensemble(std::span<Prediction const>(none)), UsageError);
  std::vector<Prediction> shorter{p, random_pred(rng, 11, 63)};
  CHECK_THROWS_AS(ensemble(std::span<Prediction const>(shorter)), AlignmentError);
  std::vector<Prediction> renamed{p, random_pred(rng, 11, 64, "other")};
  CHECK_THROWS_AS(ensemble(std::span<Prediction const>(renamed)), AlignmentError);
}

TEST_CASE("ensemble score is at least the mean member score")
{
  // Members are noisy copies of one signal; averaging reduces noise.
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    Index const    T = 40 + static_cast<Index>(rng.below(60));
    auto const     target = testing::random_matrix<double>(rng, 10, T, -1.0, 1.0);
    std::size_t const M = 2 + rng.below(4);
    std::vector<Prediction> members;
    double                  mean_member = 0;
    for (std::size_t k = 0; k < M; ++k) {
      Matrix<double> v(11, T);
      v.row(0) = testing::random_matrix<double>(rng, 1, T, -1.0, 1.0);
      v.bottomRows(10) = target + 1.5 * testing::random_matrix<double>(rng, 10, T, -1.0, 1.0);
      members.push_back(pred(std::move(v)));
      mean_member += evaluate(members.back(), target).mean_r / static_cast<double>(M);
    }
    CHECK(evaluate(ensemble(std::span<Prediction const>(members)), target).mean_r >= mean_member - 1e-12);
  }
}

TEST_CASE("prediction sets round trip")
{
  auto const dir = fs::temp_directory_path() / fmt::format("ccn-eval-{}", ::getpid());
  Rng        rng(7);
  PredictionSet set;
  set.checkpoint_id = "abc";
  set.predictions = {random_pred(rng, 11, 20, "x"), random_pred(rng, 10, 30, "y")};
  save_predictions(dir, set);
  auto const back = load_predictions(dir);
  CHECK(back.checkpoint_id == "abc");
  REQUIRE(back.predictions.size() == 2);
  CHECK(back.predictions[1].recording == "y");
  CHECK(back.predictions[1].values.rows() == 10);
  CHECK(back.predictions[0].values == set.predictions[0].values.cast<float>().cast<double>());

  set.predictions.push_back(set.predictions[0]);
  CHECK_THROWS_AS(save_predictions(dir / "dup", set), UsageError);
  CHECK_FALSE(fs::exists(dir / "dup"));
  CHECK_THROWS_AS(load_predictions(dir / "missing"), LoadError);
  fs::remove_all(dir);
}
